//! Seeded synthetic benchmark used by the ablation grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{polar_feature_map, FeatureParams};
use crate::geometry::{FrameSequence, ImageGeometry, PolarImage, ScanKinematics};
use crate::labelgen::{LabelParams, MeshIndex, SoftLabel, TriangleMesh};
use crate::net::{Tensor, TrainConfig, UNetSpec};
use crate::phantom::{frame_rng, simulate_frame_indexed, PhantomParams, PhantomSpec, ScanPlan, ShapeSpec};

/// Frames, poses and labels of one simulated acquisition.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub geometry: ImageGeometry,
    pub frames: FrameSequence,
    pub images: Vec<PolarImage>,
    pub labels: Vec<SoftLabel>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.frames.len() != self.images.len() || self.frames.len() != self.labels.len() {
            return Err(Error::Alignment(format!(
                "{} frames, {} images, {} labels",
                self.frames.len(),
                self.images.len(),
                self.labels.len()
            )));
        }
        let (r, c) = (self.geometry.n_samples, self.geometry.n_rays);
        for (img, lab) in self.images.iter().zip(&self.labels) {
            if img.geometry != self.geometry || lab.rows() != r || lab.cols() != c {
                return Err(Error::Dimension("frame lattice differs from dataset geometry".into()));
            }
        }
        Ok(())
    }

    pub fn sweep_ids(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.sweep_id).collect()
    }
}

/// Benchmark recipe plus the model and optimiser settings the grid trains
/// with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub geometry: ImageGeometry,
    pub phantom: PhantomParams,
    pub shape: ShapeSpec,
    /// Anatomy held out of training for the unseen-anatomy split.
    pub unseen_shape: ShapeSpec,
    pub kinematics: ScanKinematics,
    pub plan: ScanPlan,
    pub label: LabelParams,
    pub features: FeatureParams,
    /// Chance that a frame loses probe contact: the image is pure speckle
    /// while the label still marks the bone under the probe.
    pub dropout_probability: f64,
    /// Per-frame overall gain, drawn log-uniformly from this range; models
    /// operator gain changes between acquisitions.
    pub gain_range: [f64; 2],
    /// Short specular soft-tissue echoes per frame: as bright as bone, but
    /// no shadow and no label. Placed above the bone on their rays.
    pub clutter: ClutterParams,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub net: UNetSpec,
    pub train: TrainConfig,
}

fn benchmark_plan() -> ScanPlan {
    let n = 10;
    ScanPlan {
        n_sweeps: n,
        sweep_angles_rad: (0..n).map(|i| -0.25 + 0.5 * i as f64 / (n - 1) as f64).collect(),
        carriage_range_m: [-0.012, 0.012],
        frames_per_sweep: 13,
        alternate_direction: true,
    }
}

/// Weak depth attenuation keeps the confidence drop at the bone, not under
/// the transducer; a short finest wavelength and low noise threshold suit
/// one-sample-thick echoes on a 64-sample lattice; the noise threshold is
/// off because the shadow term already suppresses speckle responses.
fn benchmark_features() -> FeatureParams {
    let mut f = FeatureParams::default();
    f.confidence.alpha = 0.0;
    f.confidence.beta = 50.0;
    f.log_gabor.min_wavelength_px = 3.0;
    f.log_gabor.noise_t = 0.0;
    f
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            geometry: ImageGeometry::default(),
            phantom: PhantomParams::default(),
            shape: ShapeSpec::default(),
            unseen_shape: ShapeSpec::Cylinder {
                depth_m: 0.03,
                radius_m: 0.008,
                half_length_m: 0.04,
            },
            kinematics: ScanKinematics {
                sweep_axis: nalgebra::Vector3::y(),
                sweep_pivot: nalgebra::Vector3::zeros(),
                carriage_axis: nalgebra::Vector3::x(),
            },
            plan: benchmark_plan(),
            label: LabelParams::default(),
            features: benchmark_features(),
            dropout_probability: 0.25,
            gain_range: [0.25, 4.0],
            clutter: ClutterParams::default(),
            train_fraction: 0.6,
            split_seed: 3,
            net: UNetSpec {
                base_channels: 4,
                depth: 2,
                ..UNetSpec::default()
            },
            train: TrainConfig {
                epochs: 150,
                learning_rate: 0.2,
                ..TrainConfig::default()
            },
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.phantom.validate()?;
        self.plan.validate()?;
        self.kinematics.validate()?;
        self.label.validate()?;
        self.features.validate()?;
        self.net.validate()?;
        self.net.check_input(self.geometry.n_samples, self.geometry.n_rays)?;
        self.train.validate()?;
        self.clutter.validate()?;
        if !(0.0..1.0).contains(&self.dropout_probability) {
            return Err(Error::InvalidParam(format!("dropout probability {}", self.dropout_probability)));
        }
        let [g0, g1] = self.gain_range;
        if !(g0 > 0.0 && g0 <= g1 && g1.is_finite()) {
            return Err(Error::InvalidParam(format!("gain range {:?}", self.gain_range)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Split(format!("train fraction {}", self.train_fraction)));
        }
        Ok(())
    }

    /// Fixed-length reset window: frames per sweep rounded to the nearest
    /// power of two (ties round up).
    pub fn default_fixed_length(&self) -> usize {
        nearest_power_of_two(self.plan.frames_per_sweep)
    }
}

pub fn nearest_power_of_two(n: usize) -> usize {
    let up = n.max(1).next_power_of_two();
    let down = up / 2;
    if down >= 1 && n - down < up - n {
        down
    } else {
        up
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterParams {
    pub per_frame: usize,
    /// Fragment length range in rays.
    pub rays: [usize; 2],
    /// Echo strength range, in units of the phantom's reflect gain.
    pub strength: [f64; 2],
}

impl Default for ClutterParams {
    fn default() -> Self {
        ClutterParams {
            per_frame: 10,
            rays: [3, 8],
            strength: [0.4, 1.0],
        }
    }
}

impl ClutterParams {
    fn validate(&self) -> Result<()> {
        let [r0, r1] = self.rays;
        let [s0, s1] = self.strength;
        if r0 == 0 || r0 > r1 || !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::InvalidParam(format!("clutter {self:?}")));
        }
        Ok(())
    }
}

/// Adds clutter fragments to `img`, above the labelled bone on each ray.
fn add_clutter(img: &mut PolarImage, label: &SoftLabel, spec: &BenchmarkSpec, seed: u64) {
    let c = &spec.clutter;
    let (rows, cols) = (img.data.rows(), img.data.cols());
    let mut rng = frame_rng(spec.phantom.seed ^ CLUTTER_SALT, seed);
    // first labelled sample per ray bounds the clutter depth
    let floor: Vec<usize> = (0..cols)
        .map(|k| (0..rows).find(|&s| label.data.get(s, k) > 0.5).unwrap_or(rows))
        .collect();
    for _ in 0..c.per_frame {
        let len = rng.gen_range(c.rays[0]..=c.rays[1]).min(cols);
        let k0 = rng.gen_range(0..=cols - len);
        let row = rng.gen_range(2..rows - 2);
        let amp = spec.phantom.reflect_gain * rng.gen_range(c.strength[0]..=c.strength[1]);
        for k in k0..k0 + len {
            if row + 2 < floor[k] {
                let v = img.data.get(row, k);
                img.data.set(row, k, v + amp * (v / spec.phantom.speckle_mean.max(1e-12)).min(3.0));
            }
        }
    }
}

const CLUTTER_SALT: u64 = 0xC1A7_7E55;
const DROPOUT_SALT: u64 = 0xD20F_0A7E;
const GAIN_SALT: u64 = 0x6A1B_5EED;

/// Simulates one acquisition of `mesh`, replacing dropout frames by
/// echo-free speckle.
pub fn simulate_dataset(spec: &BenchmarkSpec, mesh: TriangleMesh) -> Result<Dataset> {
    spec.validate()?;
    let phantom = PhantomSpec {
        mesh,
        params: spec.phantom,
        label: spec.label,
    };
    let frames = spec.plan.frames(&spec.kinematics)?;
    let index = MeshIndex::new(phantom.mesh.clone());
    let empty = MeshIndex::new(TriangleMesh::empty());
    let mut images = Vec::with_capacity(frames.len());
    let mut labels = Vec::with_capacity(frames.len());
    for f in frames.iter() {
        let seed = f.frame_id as u64;
        let (img, label) = simulate_frame_indexed(&phantom, &index, &f.pose, &spec.geometry, seed)?;
        let dropped = frame_rng(spec.phantom.seed ^ DROPOUT_SALT, seed).gen::<f64>() < spec.dropout_probability;
        let mut img = if dropped {
            simulate_frame_indexed(&phantom, &empty, &f.pose, &spec.geometry, seed)?.0
        } else {
            img
        };
        add_clutter(&mut img, &label, spec, seed);
        let [g0, g1] = spec.gain_range;
        let u: f64 = frame_rng(spec.phantom.seed ^ GAIN_SALT, seed).gen();
        let gain = (g0.ln() + u * (g1.ln() - g0.ln())).exp();
        img.data.data_mut().iter_mut().for_each(|v| *v *= gain);
        images.push(img);
        labels.push(label);
    }
    Ok(Dataset {
        geometry: spec.geometry,
        frames,
        images,
        labels,
    })
}

/// Seen-anatomy and unseen-anatomy acquisitions for `spec`.
pub fn build_benchmark(spec: &BenchmarkSpec) -> Result<(Dataset, Dataset)> {
    let seen = simulate_dataset(spec, spec.shape.build()?)?;
    let unseen = simulate_dataset(spec, spec.unseen_shape.build()?)?;
    Ok((seen, unseen))
}

/// Network-ready tensors for every frame of a dataset.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub bmode: Vec<Tensor>,
    pub feature: Vec<Tensor>,
    pub labels: Vec<Tensor>,
    pub sweep_ids: Vec<usize>,
    pub frames: FrameSequence,
}

/// B-mode values are clipped to [0, 1]; bone echoes saturate, speckle stays
/// well below.
pub fn bmode_channel(img: &PolarImage) -> Tensor {
    let g = &img.data;
    Tensor::from_vec(1, g.rows(), g.cols(), g.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("grid dims match")
}

fn grid_tensor(g: &crate::grid::Grid) -> Tensor {
    Tensor::from_vec(1, g.rows(), g.cols(), g.data().to_vec()).expect("grid dims match")
}

pub fn prepare(data: &Dataset, features: &FeatureParams) -> Result<PreparedDataset> {
    data.validate()?;
    let mut out = PreparedDataset {
        bmode: Vec::with_capacity(data.images.len()),
        feature: Vec::with_capacity(data.images.len()),
        labels: Vec::with_capacity(data.images.len()),
        sweep_ids: data.sweep_ids(),
        frames: data.frames.clone(),
    };
    for (img, lab) in data.images.iter().zip(&data.labels) {
        out.bmode.push(bmode_channel(img));
        out.feature.push(grid_tensor(&polar_feature_map(img, features)?.data));
        out.labels.push(grid_tensor(&lab.data));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_two_rounding() {
        assert_eq!(nearest_power_of_two(13), 16);
        assert_eq!(nearest_power_of_two(11), 8);
        assert_eq!(nearest_power_of_two(12), 16);
        assert_eq!(nearest_power_of_two(1), 1);
        assert_eq!(nearest_power_of_two(16), 16);
    }

    #[test]
    fn dropout_frames_are_echo_free_but_labelled() {
        let spec = BenchmarkSpec {
            dropout_probability: 0.5,
            clutter: ClutterParams {
                per_frame: 0,
                ..ClutterParams::default()
            },
            ..BenchmarkSpec::default()
        };
        let data = simulate_dataset(&spec, spec.shape.build().unwrap()).unwrap();
        let bright = |img: &PolarImage| img.data.max();
        let labelled: Vec<usize> = (0..data.labels.len()).filter(|&i| data.labels[i].data.max() > 0.5).collect();
        let dark = labelled.iter().filter(|&&i| bright(&data.images[i]) < 0.5 * spec.phantom.reflect_gain).count();
        assert!(dark > 0 && dark < labelled.len(), "{dark} of {}", labelled.len());
        let again = simulate_dataset(&spec, spec.shape.build().unwrap()).unwrap();
        assert_eq!(again.images, data.images);
    }
}
