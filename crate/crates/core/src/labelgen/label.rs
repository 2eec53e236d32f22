use nalgebra::Vector3;

use super::bvh::MeshIndex;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{FrameSequence, ImageGeometry, Pose};
use crate::grid::Grid;

/// Soft bone-surface label on a polar lattice (rows = samples, cols = rays).
pub type SoftLabel = FeatureMap;

/// First surface crossing of one scanline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanlineHit {
    pub ray: usize,
    /// Distance from the apex along the ray.
    pub range_m: f64,
    /// Nearest sample bin, if the hit lies within the imaged depth range.
    pub sample: Option<usize>,
    /// |cos| of the angle between the ray and the surface normal.
    pub cos_incidence: f64,
    pub triangle: usize,
}

/// World-space direction of scanline `ray` under `pose`.
pub fn ray_direction(geo: &ImageGeometry, pose: &Pose, ray: usize) -> Vector3<f64> {
    let a = geo.ray_angle(ray);
    pose.apply_vector(&Vector3::new(a.sin(), 0.0, a.cos()))
}

/// Casts every scanline of a posed frame; `None` where the ray misses.
pub fn trace_scanlines(mesh: &MeshIndex, pose: &Pose, geo: &ImageGeometry) -> Result<Vec<Option<ScanlineHit>>> {
    geo.validate()?;
    let apex = pose.translation;
    let dmin = geo.depth_min_m;
    let step = geo.depth_step();
    Ok((0..geo.n_rays)
        .map(|ray| {
            let dir = ray_direction(geo, pose, ray);
            mesh.first_hit(&apex, &dir).map(|hit| {
                let sample = if hit.t >= dmin && hit.t <= geo.depth_max_m {
                    let s = ((hit.t - dmin) / step).round() as usize;
                    Some(s.min(geo.n_samples - 1))
                } else {
                    None
                };
                ScanlineHit {
                    ray,
                    range_m: hit.t,
                    sample,
                    cos_incidence: dir.dot(&mesh.mesh().normal(hit.triangle)).abs().min(1.0),
                    triangle: hit.triangle,
                }
            })
        })
        .collect())
}

/// Bins `(sample, ray)` of in-range hits whose incidence angle is at most
/// `max_incidence_rad`.
pub fn gated_bins(hits: &[Option<ScanlineHit>], max_incidence_rad: f64) -> Vec<(usize, usize)> {
    hits.iter()
        .flatten()
        .filter(|h| h.cos_incidence.acos() <= max_incidence_rad + 1e-12)
        .filter_map(|h| h.sample.map(|s| (s, h.ray)))
        .collect()
}

/// Places a unit-peak Gaussian of width `sigma_px` at every bin and keeps the
/// per-bin maximum, so isolated hits peak at exactly 1 and neighbouring hits
/// along a surface do not saturate.
pub fn soften_bins(geo: &ImageGeometry, bins: &[(usize, usize)], sigma_px: f64) -> Result<SoftLabel> {
    if !(sigma_px > 0.0) || !sigma_px.is_finite() {
        return Err(Error::InvalidParam(format!("sigma_px must be positive, got {sigma_px}")));
    }
    let (rows, cols) = (geo.n_samples, geo.n_rays);
    let mut grid = Grid::zeros(rows, cols);
    let radius = (6.0 * sigma_px).ceil() as isize;
    let denom = 2.0 * sigma_px * sigma_px;
    for &(s, k) in bins {
        let r0 = (s as isize - radius).max(0) as usize;
        let r1 = ((s as isize + radius) as usize).min(rows - 1);
        let c0 = (k as isize - radius).max(0) as usize;
        let c1 = ((k as isize + radius) as usize).min(cols - 1);
        for r in r0..=r1 {
            let dr = r as f64 - s as f64;
            for c in c0..=c1 {
                let dc = c as f64 - k as f64;
                let v = (-(dr * dr + dc * dc) / denom).exp();
                if v > grid.get(r, c) {
                    grid.set(r, c, v);
                }
            }
        }
    }
    FeatureMap::new(grid)
}

/// Visibility label of one frame: gated first hits softened by a Gaussian.
pub fn generate_frame_label(
    mesh: &MeshIndex,
    pose: &Pose,
    geo: &ImageGeometry,
    sigma_px: f64,
    max_incidence_rad: f64,
) -> Result<SoftLabel> {
    let hits = trace_scanlines(mesh, pose, geo)?;
    soften_bins(geo, &gated_bins(&hits, max_incidence_rad), sigma_px)
}

pub fn generate_sequence_labels(
    mesh: &MeshIndex,
    frames: &FrameSequence,
    geo: &ImageGeometry,
    sigma_px: f64,
    max_incidence_rad: f64,
) -> Result<Vec<SoftLabel>> {
    if frames.is_empty() {
        return Err(Error::InvalidParam("empty frame sequence".into()));
    }
    frames
        .iter()
        .map(|f| generate_frame_label(mesh, &f.pose, geo, sigma_px, max_incidence_rad))
        .collect()
}
