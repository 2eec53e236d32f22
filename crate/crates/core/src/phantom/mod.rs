//! Synthetic B-mode sweeps over simple bone-like meshes, with exact labels.
//!
//! Each scanline is cast against the mesh; the first hit reflects with an
//! incidence-dependent gain and casts an acoustic shadow. Multiplicative
//! Rayleigh speckle covers the whole frame.

pub mod shapes;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    FrameRecord, FrameSequence, ImageGeometry, PolarImage, Pose, ScanKinematics, SweepDirection,
};
use crate::grid::Grid;
use crate::labelgen::{gated_bins, soften_bins, trace_scanlines, LabelParams, MeshIndex, Point, SoftLabel, TriangleMesh};
use nalgebra::Vector3;

/// SplitMix64 finaliser, used to derive per-frame seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn frame_rng(seed: u64, frame_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ splitmix64(frame_seed))
}

/// Appearance parameters of the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub reflect_gain: f64,
    pub specular_exponent: f64,
    pub shadow_attenuation: f64,
    pub speckle_mean: f64,
    /// Rayleigh scale of the multiplicative speckle; 0.8 gives a mean near 1.
    pub speckle_shape: f64,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            reflect_gain: 1.0,
            specular_exponent: 4.0,
            shadow_attenuation: 0.15,
            speckle_mean: 0.12,
            speckle_shape: 0.8,
            noise_floor: 0.002,
            seed: 7,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.reflect_gain >= 0.0
            && self.specular_exponent >= 0.0
            && (0.0..=1.0).contains(&self.shadow_attenuation)
            && self.speckle_mean >= 0.0
            && self.speckle_shape > 0.0
            && self.noise_floor >= 0.0
            && [self.reflect_gain, self.specular_exponent, self.speckle_mean, self.speckle_shape, self.noise_floor]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParam(format!("phantom parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub mesh: TriangleMesh,
    pub params: PhantomParams,
    /// Softening and incidence gating of the companion labels.
    pub label: LabelParams,
}

impl PhantomSpec {
    pub fn new(mesh: TriangleMesh, params: PhantomParams) -> Result<Self> {
        mesh.validate()?;
        params.validate()?;
        Ok(PhantomSpec {
            mesh,
            params,
            label: LabelParams::default(),
        })
    }
}

/// Mesh recipes selectable from configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    FlatPlate { depth_m: f64, half_extent_m: f64 },
    TiltedPlate { depth_m: f64, half_extent_m: f64, tilt_deg: f64 },
    Cylinder { depth_m: f64, radius_m: f64, half_length_m: f64 },
    Wedge { ridge_depth_m: f64, half_width_m: f64, height_m: f64, half_length_m: f64 },
    /// Spinous-process wedge flanked by two deeper laminae.
    Vertebra { ridge_depth_m: f64, scale: f64 },
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec::Vertebra {
            ridge_depth_m: 0.02,
            scale: 1.0,
        }
    }
}

impl ShapeSpec {
    pub fn build(&self) -> Result<TriangleMesh> {
        let mesh = match *self {
            ShapeSpec::FlatPlate { depth_m, half_extent_m } => shapes::flat_plate(depth_m, half_extent_m, 16),
            ShapeSpec::TiltedPlate {
                depth_m,
                half_extent_m,
                tilt_deg,
            } => shapes::tilted_plate(depth_m, half_extent_m, tilt_deg.to_radians(), 16),
            ShapeSpec::Cylinder {
                depth_m,
                radius_m,
                half_length_m,
            } => shapes::cylinder(depth_m, radius_m, half_length_m, 48, 8),
            ShapeSpec::Wedge {
                ridge_depth_m,
                half_width_m,
                height_m,
                half_length_m,
            } => shapes::wedge_prism(ridge_depth_m, half_width_m, height_m, half_length_m, 8),
            ShapeSpec::Vertebra { ridge_depth_m, scale } => shapes::vertebra(ridge_depth_m, scale),
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// A recipe shape translated by `offset_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedShape {
    pub shape: ShapeSpec,
    #[serde(default)]
    pub offset_m: [f64; 3],
}

impl PlacedShape {
    pub fn build(&self) -> Result<TriangleMesh> {
        let [x, y, z] = self.offset_m;
        if ![x, y, z].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParam(format!("shape offset {:?}", self.offset_m)));
        }
        Ok(self.shape.build()?.transformed(&Pose::from_translation(Vector3::new(x, y, z))))
    }

    /// Exact distance to the surface where a closed form exists (cylinders).
    pub fn analytic_distance(&self, p: &Point) -> Option<f64> {
        match self.shape {
            ShapeSpec::Cylinder {
                depth_m,
                radius_m,
                half_length_m,
            } => {
                let q = p - Vector3::new(self.offset_m[0], self.offset_m[1], self.offset_m[2] + depth_m);
                let radial = (q.x * q.x + q.z * q.z).sqrt() - radius_m;
                let along = (q.y.abs() - half_length_m).max(0.0);
                Some((radial * radial + along * along).sqrt())
            }
            _ => None,
        }
    }
}

/// Union of placed shapes as one mesh.
pub fn build_scene(shapes: &[PlacedShape]) -> Result<TriangleMesh> {
    if shapes.is_empty() {
        return Err(Error::InvalidParam("scene has no shapes".into()));
    }
    let mut mesh = TriangleMesh::empty();
    for s in shapes {
        mesh.merge(&s.build()?);
    }
    Ok(mesh)
}

/// Rayleigh variate with scale `sigma` by inversion.
fn rayleigh<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    sigma * (-2.0 * u.ln()).sqrt()
}

/// One simulated frame against a prebuilt mesh index.
pub fn simulate_frame_indexed(
    spec: &PhantomSpec,
    mesh: &MeshIndex,
    pose: &Pose,
    geo: &ImageGeometry,
    frame_seed: u64,
) -> Result<(PolarImage, SoftLabel)> {
    spec.params.validate()?;
    let p = &spec.params;
    let hits = trace_scanlines(mesh, pose, geo)?;
    let mut rng = frame_rng(p.seed, frame_seed);
    let dmin = geo.depth_min_m;
    let step = geo.depth_step();
    let mut data = Grid::zeros(geo.n_samples, geo.n_rays);
    for s in 0..geo.n_samples {
        let depth = dmin + s as f64 * step;
        for (k, hit) in hits.iter().enumerate() {
            let mut base = p.speckle_mean;
            if let Some(h) = hit {
                match h.sample {
                    Some(hs) if hs == s => {
                        base += p.reflect_gain * h.cos_incidence.powf(p.specular_exponent);
                    }
                    Some(hs) if s > hs => base *= p.shadow_attenuation,
                    None if h.range_m < depth => base *= p.shadow_attenuation,
                    _ => {}
                }
            }
            data.set(s, k, base * rayleigh(&mut rng, p.speckle_shape) + p.noise_floor);
        }
    }
    let label = soften_bins(geo, &gated_bins(&hits, spec.label.max_incidence_rad()), spec.label.sigma_px)?;
    Ok((PolarImage::new(*geo, data)?, label))
}

pub fn simulate_frame(spec: &PhantomSpec, pose: &Pose, geo: &ImageGeometry, frame_seed: u64) -> Result<(PolarImage, SoftLabel)> {
    simulate_frame_indexed(spec, &MeshIndex::new(spec.mesh.clone()), pose, geo, frame_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPlan {
    pub n_sweeps: usize,
    pub sweep_angles_rad: Vec<f64>,
    pub carriage_range_m: [f64; 2],
    pub frames_per_sweep: usize,
    pub alternate_direction: bool,
}

impl Default for ScanPlan {
    fn default() -> Self {
        let angles = [-0.35, -0.25, -0.15, -0.05, 0.05, 0.15, 0.25, 0.35];
        ScanPlan {
            n_sweeps: 8,
            sweep_angles_rad: angles.to_vec(),
            carriage_range_m: [-0.012, 0.012],
            frames_per_sweep: 13,
            alternate_direction: true,
        }
    }
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps == 0
            || self.sweep_angles_rad.len() != self.n_sweeps
            || self.frames_per_sweep == 0
            || !self.carriage_range_m.iter().chain(&self.sweep_angles_rad).all(|v| v.is_finite())
        {
            return Err(Error::InvalidParam(format!(
                "scan plan: {} sweeps, {} angles, {} frames per sweep",
                self.n_sweeps,
                self.sweep_angles_rad.len(),
                self.frames_per_sweep
            )));
        }
        Ok(())
    }

    /// Carriage positions of one sweep in acquisition order.
    pub fn carriage_positions(&self, sweep: usize) -> (SweepDirection, Vec<f64>) {
        let [a, b] = self.carriage_range_m;
        let n = self.frames_per_sweep;
        let mut ts: Vec<f64> = (0..n)
            .map(|i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect();
        if self.alternate_direction && sweep % 2 == 1 {
            ts.reverse();
            (SweepDirection::Backward, ts)
        } else {
            (SweepDirection::Forward, ts)
        }
    }

    /// Frame records for the whole plan.
    pub fn frames(&self, kin: &ScanKinematics) -> Result<FrameSequence> {
        self.validate()?;
        let mut frames = Vec::with_capacity(self.n_sweeps * self.frames_per_sweep);
        for (sweep, &theta) in self.sweep_angles_rad.iter().enumerate() {
            let (direction, ts) = self.carriage_positions(sweep);
            for t in ts {
                frames.push(FrameRecord::new(kin, frames.len(), sweep, direction, theta, t)?);
            }
        }
        Ok(FrameSequence::new(frames))
    }
}

/// Frames with their simulated images and labels, index-aligned.
#[derive(Clone, Debug)]
pub struct SimulatedScan {
    pub frames: FrameSequence,
    pub images: Vec<PolarImage>,
    pub labels: Vec<SoftLabel>,
}

pub fn simulate_scan(spec: &PhantomSpec, kin: &ScanKinematics, plan: &ScanPlan, geo: &ImageGeometry) -> Result<SimulatedScan> {
    let frames = plan.frames(kin)?;
    let index = MeshIndex::new(spec.mesh.clone());
    let mut images = Vec::with_capacity(frames.len());
    let mut labels = Vec::with_capacity(frames.len());
    for f in frames.iter() {
        let (img, label) = simulate_frame_indexed(spec, &index, &f.pose, geo, f.frame_id as u64)?;
        images.push(img);
        labels.push(label);
    }
    Ok(SimulatedScan { frames, images, labels })
}

/// Seeded split assigning whole sweeps to one side. Returns sorted frame ids.
pub fn split_train_test(frames: &FrameSequence, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut sweeps = frames.sweep_ids();
    if sweeps.len() < 2 {
        return Err(Error::Split(format!("{} sweeps, need at least 2", sweeps.len())));
    }
    sweeps.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = |s: usize| frames.iter().filter(|f| f.sweep_id == s).count();
    let target = train_fraction * frames.len() as f64;
    let mut best = (f64::INFINITY, 1);
    let mut taken = 0;
    for m in 1..sweeps.len() {
        taken += count(sweeps[m - 1]);
        let gap = (taken as f64 - target).abs();
        if gap < best.0 {
            best = (gap, m);
        }
    }
    let train_sweeps = &sweeps[..best.1];
    let (mut train, mut test): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for f in frames.iter() {
        if train_sweeps.contains(&f.sweep_id) {
            train.push(f.frame_id);
        } else {
            test.push(f.frame_id);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::geometry::pose_from_joints;
    use crate::labelgen::generate_frame_label;

    fn geo() -> ImageGeometry {
        ImageGeometry::new(0.01, 0.05, 1.0, 48, 64).unwrap()
    }

    fn plate_spec(depth: f64) -> PhantomSpec {
        PhantomSpec::new(shapes::flat_plate(depth, 0.05, 8), PhantomParams::default()).unwrap()
    }

    #[test]
    fn empty_mesh_gives_pure_speckle() {
        let spec = PhantomSpec::new(TriangleMesh::empty(), PhantomParams::default()).unwrap();
        let (img, label) = simulate_frame(&spec, &Pose::identity(), &geo(), 3).unwrap();
        assert!(label.data.data().iter().all(|&v| v == 0.0));
        let mean = img.data.mean();
        let expected = 0.12 * 0.8 * (std::f64::consts::PI / 2.0).sqrt() + 0.002;
        assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn frames_are_seed_deterministic() {
        let spec = plate_spec(0.03);
        let pose = Pose::from_axis_angle(&nalgebra::Vector3::x(), 0.1);
        let a = simulate_frame(&spec, &pose, &geo(), 9).unwrap();
        let b = simulate_frame(&spec, &pose, &geo(), 9).unwrap();
        assert_eq!(a.0.data.data(), b.0.data.data());
        assert_eq!(a.1, b.1);
        let c = simulate_frame(&spec, &pose, &geo(), 10).unwrap();
        assert_ne!(a.0.data.data(), c.0.data.data());
    }

    #[test]
    fn plate_casts_a_shadow() {
        let g = geo();
        let d = 0.03;
        let spec = plate_spec(d);
        let (img, _) = simulate_frame(&spec, &Pose::identity(), &g, 1).unwrap();
        let hits = trace_scanlines(&MeshIndex::new(spec.mesh.clone()), &Pose::identity(), &g).unwrap();
        let (mut above, mut below) = (Vec::new(), Vec::new());
        for (k, h) in hits.iter().enumerate() {
            let hs = h.unwrap().sample.unwrap();
            for s in 0..g.n_samples {
                match s.cmp(&hs) {
                    std::cmp::Ordering::Less => above.push(img.value(k, s)),
                    std::cmp::Ordering::Greater => below.push(img.value(k, s)),
                    _ => {}
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&below) < spec.params.shadow_attenuation * 1.2 * mean(&above));
    }

    #[test]
    fn simulator_labels_match_generator() {
        let g = geo();
        let spec = PhantomSpec::new(shapes::cylinder(0.03, 0.008, 0.03, 48, 6), PhantomParams::default()).unwrap();
        let index = MeshIndex::new(spec.mesh.clone());
        for (theta, t) in [(0.0, 0.0), (0.2, 0.004), (-0.3, -0.01)] {
            let pose = pose_from_joints(&ScanKinematics::default(), theta, t).unwrap();
            let (_, label) = simulate_frame(&spec, &pose, &g, 0).unwrap();
            let direct = generate_frame_label(&index, &pose, &g, spec.label.sigma_px, spec.label.max_incidence_rad()).unwrap();
            assert_eq!(label, direct);
        }
    }

    #[test]
    fn reflection_falls_with_incidence() {
        let g = geo();
        let spec = PhantomSpec::new(shapes::tilted_plate(0.03, 0.05, 0.35, 16), PhantomParams::default()).unwrap();
        let index = MeshIndex::new(spec.mesh.clone());
        let hits = trace_scanlines(&index, &Pose::identity(), &g).unwrap();
        let mut sums = vec![0.0; g.n_rays];
        for seed in 0..50 {
            let (img, _) = simulate_frame_indexed(&spec, &index, &Pose::identity(), &g, seed).unwrap();
            for (k, h) in hits.iter().enumerate() {
                sums[k] += img.value(k, h.unwrap().sample.unwrap()) / 50.0;
            }
        }
        // average the per-ray peaks within 10 degree incidence bands
        let mut bands = [(0.0, 0usize); 9];
        for (k, h) in hits.iter().enumerate() {
            let band = (h.unwrap().cos_incidence.acos().to_degrees() / 10.0) as usize;
            bands[band].0 += sums[k];
            bands[band].1 += 1;
        }
        let means: Vec<f64> = bands.iter().filter(|b| b.1 > 0).map(|b| b.0 / b.1 as f64).collect();
        assert!(means.len() >= 4);
        for w in means.windows(2) {
            assert!(w[1] <= w[0], "{means:?}");
        }
    }

    #[test]
    fn scan_enumerates_sweeps() {
        let g = ImageGeometry::new(0.01, 0.05, 1.0, 16, 16).unwrap();
        let spec = plate_spec(0.03);
        let kin = ScanKinematics::default();
        let single = ScanPlan {
            n_sweeps: 1,
            sweep_angles_rad: vec![0.2],
            carriage_range_m: [-0.01, 0.01],
            frames_per_sweep: 1,
            alternate_direction: false,
        };
        let scan = simulate_scan(&spec, &kin, &single, &g).unwrap();
        assert_eq!(scan.frames.len(), 1);
        let f = scan.frames.frames[0];
        assert_eq!((f.joint_theta_rad, f.joint_t_m), (0.2, -0.01));

        let plan = ScanPlan::default();
        let frames = plan.frames(&kin).unwrap();
        assert_eq!(frames.len(), 104);
        for s in 0..8 {
            assert_eq!(frames.iter().filter(|f| f.sweep_id == s).count(), 13);
        }
        for s in 1..8 {
            let prev: Vec<f64> = frames.iter().filter(|f| f.sweep_id == s - 1).map(|f| f.joint_t_m).collect();
            let mut cur: Vec<f64> = frames.iter().filter(|f| f.sweep_id == s).map(|f| f.joint_t_m).collect();
            cur.reverse();
            assert_eq!(prev, cur);
        }
        assert!(frames.iter().enumerate().all(|(i, f)| f.frame_id == i));
        let bad = ScanPlan {
            n_sweeps: 2,
            ..single
        };
        assert!(bad.frames(&kin).is_err());
    }

    #[test]
    fn placed_cylinder_distance_matches_mesh() {
        let placed = PlacedShape {
            shape: ShapeSpec::Cylinder {
                depth_m: 0.03,
                radius_m: 0.008,
                half_length_m: 0.01,
            },
            offset_m: [0.002, -0.012, 0.001],
        };
        let mesh = placed.build().unwrap();
        let index = MeshIndex::new(mesh.clone());
        for v in mesh.vertices.iter().step_by(7) {
            assert!(placed.analytic_distance(v).unwrap() < 1e-12);
        }
        // the faceted mesh lies inside the true tube by at most the sagitta
        let sagitta = 0.008 * (1.0 - (PI / 48.0).cos());
        let p = Point::new(0.0, -0.012, 0.031);
        let d_mesh = (index.closest_point(&p).unwrap().0 - p).norm();
        assert!((placed.analytic_distance(&p).unwrap() - d_mesh).abs() <= sagitta + 1e-12);
        assert!(build_scene(&[]).is_err());
    }

    fn ten_by_ten() -> FrameSequence {
        let plan = ScanPlan {
            n_sweeps: 10,
            sweep_angles_rad: vec![0.0; 10],
            carriage_range_m: [0.0, 0.01],
            frames_per_sweep: 10,
            alternate_direction: true,
        };
        plan.frames(&ScanKinematics::default()).unwrap()
    }

    #[test]
    fn split_is_sweep_granular() {
        let frames = ten_by_ten();
        let (train, test) = split_train_test(&frames, 0.7, 4).unwrap();
        assert_eq!((train.len(), test.len()), (70, 30));
        let sweeps = |ids: &[usize]| {
            let mut s: Vec<usize> = ids.iter().map(|&i| frames.frames[i].sweep_id).collect();
            s.dedup();
            s.sort_unstable();
            s.dedup();
            s
        };
        assert_eq!(sweeps(&train).len(), 7);
        assert_eq!(sweeps(&test).len(), 3);
        assert!(sweeps(&train).iter().all(|s| !sweeps(&test).contains(s)));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_train_test(&frames, 0.7, 4).unwrap(), (train, test));
        assert!(split_train_test(&frames, 1.0, 4).is_err());
        assert!(split_train_test(&frames.subset(&(0..10).collect::<Vec<_>>()), 0.5, 4).is_err());
    }
}
