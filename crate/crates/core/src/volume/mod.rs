//! Compounding of posed polar maps into a world-space voxel volume.

mod nrrd;

pub use nrrd::{export_nrrd, import_nrrd};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{FrameSequence, ImageGeometry, Pose};
use crate::labelgen::{Point, PointCloud};

/// Voxel lattice; voxel `(i, j, k)` is centred at `origin + (i, j, k) * spacing`
/// and stored x-fastest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub origin_m: [f64; 3],
    pub spacing_m: [f64; 3],
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spacing_m.iter().any(|s| !(*s > 0.0) || !s.is_finite())
            || self.dims.contains(&0)
            || self.origin_m.iter().any(|o| !o.is_finite())
        {
            return Err(Error::InvalidParam(format!("voxel grid {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point {
        Point::new(
            self.origin_m[0] + i as f64 * self.spacing_m[0],
            self.origin_m[1] + j as f64 * self.spacing_m[1],
            self.origin_m[2] + k as f64 * self.spacing_m[2],
        )
    }

    /// Continuous voxel coordinates of a world point.
    pub fn voxel_coords(&self, p: &Point) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.origin_m[a]) / self.spacing_m[a])
    }

    /// Nearest voxel containing `p`, if inside the lattice.
    pub fn voxel_of(&self, p: &Point) -> Option<[usize; 3]> {
        let c = self.voxel_coords(p);
        let mut out = [0; 3];
        for a in 0..3 {
            let r = c[a].round();
            if !(r >= 0.0 && r < self.dims[a] as f64) {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    /// Isotropic lattice covering every posed sector footprint plus `margin`
    /// voxels on each side.
    pub fn covering(frames: &FrameSequence, geo: &ImageGeometry, spacing_m: f64, margin: usize) -> Result<GridSpec> {
        geo.validate()?;
        if frames.is_empty() || !(spacing_m > 0.0) {
            return Err(Error::InvalidParam("covering grid needs frames and a positive spacing".into()));
        }
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for f in frames.iter() {
            for p in footprint_outline(geo, &f.pose) {
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
        let pad = margin as f64 * spacing_m;
        let origin = lo - Point::repeat(pad);
        let dims = [0, 1, 2].map(|a| ((hi[a] + pad - origin[a]) / spacing_m).ceil() as usize + 1);
        let spec = GridSpec {
            origin_m: [origin.x, origin.y, origin.z],
            spacing_m: [spacing_m; 3],
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// World points along the boundary of a posed sector.
fn footprint_outline(geo: &ImageGeometry, pose: &Pose) -> Vec<Point> {
    let mut pts = Vec::new();
    let last_s = geo.n_samples - 1;
    let last_k = geo.n_rays - 1;
    for k in 0..geo.n_rays {
        for s in [0, last_s] {
            let [x, z] = geo.sample_position(k, s);
            pts.push(pose.apply(&Vector3::new(x, 0.0, z)));
        }
    }
    for s in 0..geo.n_samples {
        for k in [0, last_k] {
            let [x, z] = geo.sample_position(k, s);
            pts.push(pose.apply(&Vector3::new(x, 0.0, z)));
        }
    }
    pts
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompoundingMode {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for CompoundingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(CompoundingMode::Max),
            "mean" => Ok(CompoundingMode::Mean),
            other => Err(Error::Parse(format!("compounding mode {other:?}"))),
        }
    }
}

/// How a bin value is distributed over voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splat {
    #[default]
    Nearest,
    /// Spread over the 8 surrounding voxels with trilinear weights; in max
    /// mode each voxel keeps the largest weighted value.
    Trilinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    pub spec: GridSpec,
    pub data: Vec<f64>,
    /// Accumulated splat weight per voxel; present in mean mode.
    pub weight: Option<Vec<f64>>,
}

impl VolumeGrid {
    pub fn zeros(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(VolumeGrid {
            data: vec![0.0; spec.len()],
            spec,
            weight: None,
        })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.spec.index(i, j, k)]
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Splats every polar bin of every frame into the lattice.
pub fn compound(
    frames: &FrameSequence,
    maps: &[FeatureMap],
    geo: &ImageGeometry,
    spec: &GridSpec,
    mode: CompoundingMode,
    splat: Splat,
) -> Result<VolumeGrid> {
    spec.validate()?;
    geo.validate()?;
    if frames.len() != maps.len() {
        return Err(Error::Alignment(format!("{} frames but {} maps", frames.len(), maps.len())));
    }
    if let Some(m) = maps.iter().find(|m| m.rows() != geo.n_samples || m.cols() != geo.n_rays) {
        return Err(Error::Dimension(format!(
            "map {}x{} vs geometry {}x{}",
            m.rows(),
            m.cols(),
            geo.n_samples,
            geo.n_rays
        )));
    }
    let n = spec.len();
    let mut acc = vec![0.0f64; n];
    let mut wsum = vec![0.0f64; n];
    // local bin positions are shared by all frames
    let local: Vec<(usize, usize, Point)> = (0..geo.n_samples)
        .flat_map(|s| {
            (0..geo.n_rays).map(move |k| {
                let [x, z] = geo.sample_position(k, s);
                (s, k, Point::new(x, 0.0, z))
            })
        })
        .collect();
    let mut deposit = |idx: usize, v: f64, w: f64| match mode {
        CompoundingMode::Max => acc[idx] = acc[idx].max(v * w),
        CompoundingMode::Mean => {
            acc[idx] += v * w;
            wsum[idx] += w;
        }
    };
    for (frame, map) in frames.iter().zip(maps) {
        for &(s, k, ref p) in &local {
            let v = map.data.get(s, k);
            let world = frame.pose.apply(p);
            match splat {
                Splat::Nearest => {
                    if let Some([i, j, l]) = spec.voxel_of(&world) {
                        deposit(spec.index(i, j, l), v, 1.0);
                    }
                }
                Splat::Trilinear => {
                    let c = spec.voxel_coords(&world);
                    let base = c.map(|x| x.floor());
                    for corner in 0..8 {
                        let mut w = 1.0;
                        let mut ijk = [0usize; 3];
                        let mut inside = true;
                        for a in 0..3 {
                            let up = (corner >> a) & 1 == 1;
                            let frac = c[a] - base[a];
                            w *= if up { frac } else { 1.0 - frac };
                            let g = base[a] + if up { 1.0 } else { 0.0 };
                            if !(g >= 0.0 && g < spec.dims[a] as f64) {
                                inside = false;
                            }
                            ijk[a] = g.max(0.0) as usize;
                        }
                        if inside && w > 0.0 {
                            deposit(spec.index(ijk[0], ijk[1], ijk[2]), v, w);
                        }
                    }
                }
            }
        }
    }
    let (data, weight) = match mode {
        CompoundingMode::Max => (acc.iter().map(|&v| v.clamp(0.0, 1.0)).collect(), None),
        CompoundingMode::Mean => (
            acc.iter()
                .zip(&wsum)
                .map(|(&a, &w)| if w > 0.0 { (a / w).clamp(0.0, 1.0) } else { 0.0 })
                .collect(),
            Some(wsum),
        ),
    };
    Ok(VolumeGrid {
        spec: *spec,
        data,
        weight,
    })
}

/// Centres of voxels whose value reaches `threshold`.
pub fn extract_surface_points(vol: &VolumeGrid, threshold: f64) -> Result<PointCloud> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParam(format!("threshold {threshold} outside (0, 1)")));
    }
    let [nx, ny, nz] = vol.spec.dims;
    let mut points = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if vol.get(i, j, k) >= threshold {
                    points.push(vol.spec.center(i, j, k));
                }
            }
        }
    }
    Ok(PointCloud::new(points))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeParams {
    pub mode: CompoundingMode,
    pub splat: Splat,
    /// Voxel spacing; 0 selects the Cartesian pixel size of the input maps.
    pub spacing_m: f64,
    pub margin_voxels: usize,
    pub threshold: f64,
}

impl Default for VolumeParams {
    fn default() -> Self {
        VolumeParams {
            mode: CompoundingMode::Max,
            splat: Splat::Nearest,
            spacing_m: 0.0,
            margin_voxels: 2,
            threshold: 0.5,
        }
    }
}

impl VolumeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_m >= 0.0 && self.spacing_m.is_finite()) || !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParam(format!(
                "volume spacing {} / threshold {}",
                self.spacing_m, self.threshold
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameRecord, ScanKinematics, SweepDirection};
    use crate::grid::Grid;

    fn geo() -> ImageGeometry {
        ImageGeometry::new(0.01, 0.03, 0.8, 9, 11).unwrap()
    }

    fn frame(id: usize, theta: f64, t: f64) -> FrameRecord {
        FrameRecord::new(&ScanKinematics::default(), id, 0, SweepDirection::Forward, theta, t).unwrap()
    }

    fn spike(g: &ImageGeometry, s: usize, k: usize, v: f64) -> FeatureMap {
        let mut grid = Grid::zeros(g.n_samples, g.n_rays);
        grid.set(s, k, v);
        FeatureMap::new(grid).unwrap()
    }

    #[test]
    fn single_bin_lands_in_hand_computed_voxel() {
        let g = geo();
        let frames = FrameSequence::new(vec![frame(0, 0.0, 0.0)]);
        let spec = GridSpec {
            origin_m: [-0.02, -0.001, 0.0],
            spacing_m: [0.001; 3],
            dims: [41, 3, 35],
        };
        let (s, k) = (6, 2);
        let vol = compound(&frames, &[spike(&g, s, k, 1.0)], &g, &spec, CompoundingMode::Max, Splat::Nearest).unwrap();
        assert_eq!(vol.nonzero_count(), 1);
        // angle -0.4 + 2 * 0.1, depth 0.01 + 6 * 0.002
        let (a, d) = (-0.2f64, 0.022f64);
        let (x, z) = (d * a.sin(), d * a.cos());
        let i = ((x + 0.02) / 0.001).round() as usize;
        let kk = (z / 0.001).round() as usize;
        assert_eq!(vol.get(i, 1, kk), 1.0);
    }

    #[test]
    fn max_is_idempotent_and_mean_averages() {
        let g = geo();
        let f0 = frame(0, 0.0, 0.0);
        let f1 = frame(1, 0.0, 0.0);
        let frames = FrameSequence::new(vec![f0, f1]);
        let spec = GridSpec::covering(&frames, &g, 0.001, 1).unwrap();
        let one = compound(
            &FrameSequence::new(vec![f0]),
            &[spike(&g, 3, 4, 0.7)],
            &g,
            &spec,
            CompoundingMode::Max,
            Splat::Nearest,
        )
        .unwrap();
        let two = compound(&frames, &[spike(&g, 3, 4, 0.7), spike(&g, 3, 4, 0.7)], &g, &spec, CompoundingMode::Max, Splat::Nearest).unwrap();
        assert_eq!(one.data, two.data);
        let mean = compound(&frames, &[spike(&g, 3, 4, 0.4), spike(&g, 3, 4, 0.8)], &g, &spec, CompoundingMode::Mean, Splat::Nearest).unwrap();
        let top = mean.data.iter().cloned().fold(0.0, f64::max);
        assert!((top - 0.6).abs() < 1e-15);
        assert!(compound(&frames, &[spike(&g, 3, 4, 0.4)], &g, &spec, CompoundingMode::Mean, Splat::Nearest).is_err());
    }

    fn random_maps(g: &ImageGeometry, n: usize) -> Vec<FeatureMap> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|_| FeatureMap::new(Grid::from_fn(g.n_samples, g.n_rays, |_, _| rng.gen())).unwrap())
            .collect()
    }

    #[test]
    fn compounding_ignores_frame_order() {
        let g = geo();
        let fr: Vec<FrameRecord> = (0..6).map(|i| frame(i, 0.1 * i as f64 - 0.2, 0.001 * i as f64)).collect();
        let maps = random_maps(&g, 6);
        let perm = [3, 0, 5, 1, 4, 2];
        let frames = FrameSequence::new(fr.clone());
        let shuffled = FrameSequence::new(perm.iter().map(|&i| fr[i]).collect());
        let shuffled_maps: Vec<FeatureMap> = perm.iter().map(|&i| maps[i].clone()).collect();
        let spec = GridSpec::covering(&frames, &g, 0.0015, 1).unwrap();
        for splat in [Splat::Nearest, Splat::Trilinear] {
            let a = compound(&frames, &maps, &g, &spec, CompoundingMode::Max, splat).unwrap();
            let b = compound(&shuffled, &shuffled_maps, &g, &spec, CompoundingMode::Max, splat).unwrap();
            assert_eq!(a.data, b.data);
            let a = compound(&frames, &maps, &g, &spec, CompoundingMode::Mean, splat).unwrap();
            let b = compound(&shuffled, &shuffled_maps, &g, &spec, CompoundingMode::Mean, splat).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nonzero_voxels_lie_near_some_sector() {
        let g = geo();
        let fr: Vec<FrameRecord> = (0..4).map(|i| frame(i, 0.15 * i as f64, 0.002 * i as f64)).collect();
        let frames = FrameSequence::new(fr.clone());
        let maps = random_maps(&g, 4);
        let spec = GridSpec::covering(&frames, &g, 0.001, 2).unwrap();
        let vol = compound(&frames, &maps, &g, &spec, CompoundingMode::Max, Splat::Nearest).unwrap();
        let half_diag = 0.5 * 0.001 * 3f64.sqrt();
        let [nx, ny, nz] = spec.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if vol.get(i, j, k) == 0.0 {
                        continue;
                    }
                    let c = spec.center(i, j, k);
                    let reachable = fr.iter().any(|f| {
                        let local = f.pose.inverse().apply(&c);
                        let r = local.x.hypot(local.z);
                        let a = local.x.atan2(local.z);
                        local.y.abs() <= half_diag
                            && r >= g.depth_min_m - half_diag
                            && r <= g.depth_max_m + half_diag
                            && a.abs() <= g.fov_rad / 2.0 + half_diag / g.depth_min_m
                    });
                    assert!(reachable, "voxel ({i}, {j}, {k}) outside every footprint");
                }
            }
        }
    }

    #[test]
    fn surface_extraction() {
        let spec = GridSpec {
            origin_m: [0.0; 3],
            spacing_m: [0.5, 1.0, 2.0],
            dims: [3, 3, 3],
        };
        let mut vol = VolumeGrid::zeros(spec).unwrap();
        assert!(extract_surface_points(&vol, 0.5).unwrap().is_empty());
        vol.data[spec.index(1, 2, 0)] = 1.0;
        let pts = extract_surface_points(&vol, 0.5).unwrap();
        assert_eq!(pts.points, vec![Point::new(0.5, 2.0, 0.0)]);
        assert!(extract_surface_points(&vol, 1.0).is_err());
    }
}
