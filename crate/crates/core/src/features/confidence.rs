//! Random-walk confidence maps.
//!
//! Each pixel's confidence is the probability that a random walker started
//! there reaches the transducer row before the far row. That is the harmonic
//! extension of the Dirichlet data (1 on the first sample row, 0 on the last)
//! over the 8-connected lattice, solved on the interior nodes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::PolarImage;
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceParams {
    /// Depth attenuation exponent.
    pub alpha: f64,
    /// Intensity contrast weight.
    pub beta: f64,
    /// Penalty for horizontal moves; diagonals pay `gamma * sqrt(2)`.
    pub gamma: f64,
    /// Relative residual `|b - Ax| / |b|` at which the solver stops.
    pub solver_tol: f64,
    pub max_iters: usize,
    /// Added to the intensity term of every edge weight before the move
    /// penalty is applied; keeps the lattice connected across bright edges.
    pub weight_floor: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams {
            alpha: 2.0,
            beta: 90.0,
            gamma: 0.05,
            solver_tol: 1e-8,
            max_iters: 20_000,
            weight_floor: 1e-6,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta > 0.0
            && self.gamma >= 0.0
            && self.solver_tol > 0.0
            && self.max_iters >= 1
            && self.weight_floor >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("confidence parameters {self:?}")))
        }
    }
}

// Neighbor offsets (drow, dcol); the index of the opposite direction is 7 - i.
const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Reduced symmetric positive-definite system over the interior rows.
///
/// Unknown `i` is pixel `(i / cols + 1, i % cols)`.
#[derive(Clone, Debug)]
pub struct LaplacianSystem {
    pub rows: usize,
    pub cols: usize,
    /// Edge weights per pixel and direction (0 where the neighbor is absent).
    weights: Vec<[f64; 8]>,
    pub diagonal: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl LaplacianSystem {
    pub fn build(img: &Grid, p: &ConfidenceParams) -> Result<Self> {
        p.validate()?;
        let (rows, cols) = (img.rows(), img.cols());
        if rows < 3 || cols < 1 {
            return Err(Error::Dimension(format!(
                "confidence map needs at least 3 rows, got {rows}x{cols}"
            )));
        }
        if img.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParam(
                "confidence map input must be finite and nonnegative".into(),
            ));
        }
        let peak = img.max();
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        let g = Grid::from_fn(rows, cols, |r, c| {
            let depth = r as f64 / (rows - 1) as f64;
            img.get(r, c) * scale * (-p.alpha * depth).exp()
        });

        let mut weights = vec![[0.0; 8]; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                for (d, &(dr, dc)) in OFFSETS.iter().enumerate() {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let penalty = match (dr, dc) {
                        (_, 0) => 0.0,
                        (0, _) => p.gamma,
                        _ => p.gamma * std::f64::consts::SQRT_2,
                    };
                    let diff = (g.get(r, c) - g.get(nr as usize, nc as usize)).abs();
                    weights[r * cols + c][d] =
                        ((-p.beta * diff).exp() + p.weight_floor) * (-p.beta * penalty).exp();
                }
            }
        }

        let n = (rows - 2) * cols;
        let mut diagonal = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let r = i / cols + 1;
            let c = i % cols;
            let w = &weights[r * cols + c];
            diagonal[i] = w.iter().sum();
            if r == 1 {
                // top-row neighbors carry the Dirichlet value 1
                rhs[i] = w[0] + w[1] + w[2];
            }
        }
        Ok(LaplacianSystem {
            rows,
            cols,
            weights,
            diagonal,
            rhs,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.diagonal.len()
    }

    /// `y = A x` on the interior unknowns.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (rows, cols) = (self.rows, self.cols);
        for (i, yi) in y.iter_mut().enumerate() {
            let r = i / cols + 1;
            let c = i % cols;
            let w = &self.weights[r * cols + c];
            let mut acc = self.diagonal[i] * x[i];
            for (d, &(dr, dc)) in OFFSETS.iter().enumerate() {
                let nr = r as isize + dr;
                if nr <= 0 || nr >= rows as isize - 1 {
                    continue;
                }
                let nc = c as isize + dc;
                if nc < 0 || nc >= cols as isize {
                    continue;
                }
                acc -= w[d] * x[(nr as usize - 1) * cols + nc as usize];
            }
            *yi = acc;
        }
    }

    /// Dense copy of the system matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.unknowns();
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                a[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        a
    }

    fn assemble(&self, interior: &[f64]) -> Grid {
        let mut out = Grid::zeros(self.rows, self.cols);
        for c in 0..self.cols {
            out.set(0, c, 1.0);
        }
        for (i, &v) in interior.iter().enumerate() {
            out.set(i / self.cols + 1, i % self.cols, v.clamp(0.0, 1.0));
        }
        out
    }
}

/// Outcome of an iterative confidence-map solve.
#[derive(Clone, Debug)]
pub struct ConfidenceSolve {
    pub map: FeatureMap,
    pub iterations: usize,
    pub residual: f64,
}

pub fn confidence_map(img: &PolarImage, p: &ConfidenceParams) -> Result<FeatureMap> {
    Ok(confidence_map_grid(&img.data, p)?.map)
}

/// Jacobi-preconditioned conjugate gradient on the reduced system.
pub fn confidence_map_grid(img: &Grid, p: &ConfidenceParams) -> Result<ConfidenceSolve> {
    let sys = LaplacianSystem::build(img, p)?;
    let n = sys.unknowns();
    let b = &sys.rhs;
    let b_norm = norm(b);
    if n == 0 || b_norm == 0.0 {
        let zeros = vec![0.0; n];
        return Ok(ConfidenceSolve {
            map: FeatureMap::new(sys.assemble(&zeros))?,
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = sys.diagonal.iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut dir = z.clone();
    let mut ad = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    let mut iterations = 0;
    while iterations < p.max_iters {
        sys.apply(&dir, &mut ad);
        let step = rz / dot(&dir, &ad);
        for i in 0..n {
            x[i] += step * dir[i];
            r[i] -= step * ad[i];
        }
        iterations += 1;
        residual = norm(&r) / b_norm;
        if residual <= p.solver_tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let ratio = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            dir[i] = z[i] + ratio * dir[i];
        }
    }
    if !(residual <= p.solver_tol) {
        return Err(Error::Convergence {
            iterations,
            residual,
        });
    }
    Ok(ConfidenceSolve {
        map: FeatureMap::new(sys.assemble(&x))?,
        iterations,
        residual,
    })
}

/// Largest lattice side accepted by [`confidence_map_dense`].
pub const DENSE_MAX_SIDE: usize = 64;

/// Direct Cholesky solve of the same system; reference for small lattices.
pub fn confidence_map_dense(img: &Grid, p: &ConfidenceParams) -> Result<Grid> {
    if img.rows() > DENSE_MAX_SIDE || img.cols() > DENSE_MAX_SIDE {
        return Err(Error::Dimension(format!(
            "dense solve limited to {DENSE_MAX_SIDE}x{DENSE_MAX_SIDE}, got {}x{}",
            img.rows(),
            img.cols()
        )));
    }
    let sys = LaplacianSystem::build(img, p)?;
    let a = sys.to_dense();
    let b = DVector::from_column_slice(&sys.rhs);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Degenerate("confidence system is not positive definite".into()))?;
    let x = chol.solve(&b);
    Ok(sys.assemble(x.as_slice()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rows: usize, cols: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(rows, cols, |_, _| rng.gen::<f64>())
    }

    fn tight() -> ConfidenceParams {
        ConfidenceParams {
            solver_tol: 1e-12,
            ..ConfidenceParams::default()
        }
    }

    #[test]
    fn boundary_rows_are_fixed() {
        let img = random_grid(12, 9, 3);
        let map = confidence_map_grid(&img, &ConfidenceParams::default()).unwrap().map;
        for c in 0..9 {
            assert_eq!(map.data.get(0, c), 1.0);
            assert_eq!(map.data.get(11, c), 0.0);
        }
    }

    #[test]
    fn laterally_constant_image_gives_identical_columns() {
        let img = Grid::from_fn(20, 10, |r, _| 0.2 + 0.03 * r as f64 + if r == 9 { 0.8 } else { 0.0 });
        let map = confidence_map_grid(&img, &tight()).unwrap().map;
        let dense = confidence_map_dense(&img, &tight()).unwrap();
        for r in 0..20 {
            for c in 1..10 {
                assert!((map.data.get(r, c) - map.data.get(r, 0)).abs() < 1e-9);
            }
            if r > 0 {
                assert!(map.data.get(r, 0) <= map.data.get(r - 1, 0) + 1e-12);
            }
            assert!((map.data.get(r, 0) - dense.get(r, 0)).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_dense_solve_on_random_image() {
        let img = random_grid(16, 16, 42);
        let it = confidence_map_grid(&img, &tight()).unwrap();
        let dense = confidence_map_dense(&img, &tight()).unwrap();
        let worst = it
            .map
            .data
            .data()
            .iter()
            .zip(dense.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "max diff {worst}");
    }

    #[test]
    fn iteration_budget_exhaustion_reports_residual() {
        let img = random_grid(16, 16, 1);
        let p = ConfidenceParams {
            max_iters: 2,
            solver_tol: 1e-14,
            ..ConfidenceParams::default()
        };
        match confidence_map_grid(&img, &p) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn negative_input_rejected() {
        let mut img = Grid::filled(5, 5, 1.0);
        img.set(2, 2, -1.0);
        assert!(confidence_map_grid(&img, &ConfidenceParams::default()).is_err());
    }
}
