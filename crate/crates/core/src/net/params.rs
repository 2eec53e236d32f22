use rand::Rng;
use rand_distr::StandardNormal;

/// Named parameter arrays in declaration order. Also used for gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> usize {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        });
        self.entries.len() - 1
    }

    /// He-normal initialised array with the given fan-in.
    pub fn add_he<R: Rng>(&mut self, rng: &mut R, name: impl Into<String>, shape: &[usize], fan_in: usize) -> usize {
        let std = (2.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.add(name, shape, values)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> usize {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.entries[i].values
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i].values
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: vec![0.0; e.values.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for e in &mut self.entries {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.values.iter().all(|v| v.is_finite()))
    }

    /// Position of a named array.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}
