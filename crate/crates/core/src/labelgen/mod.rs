//! Visibility-based ground truth: rigid registration of annotated points to a
//! surface mesh, scanline ray casting per frame pose and Gaussian softening of
//! the first hits.

mod bvh;
mod icp;
mod label;
mod mesh;

pub use bvh::{closest_point_brute_force, ray_cast_brute_force, MeshIndex, RayHit};
pub use icp::{icp_register, icp_register_indexed, kabsch, IcpResult};
pub use label::{
    gated_bins, generate_frame_label, generate_sequence_labels, ray_direction, soften_bins,
    trace_scanlines, ScanlineHit, SoftLabel,
};
pub use mesh::{closest_point_on_triangle, intersect_triangle, Point, PointCloud, TriangleMesh};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convenience first-hit query; builds a BVH per call. Use [`MeshIndex`] for
/// repeated queries.
pub fn ray_cast_first_hit(mesh: &TriangleMesh, origin: &Point, direction: &Point) -> Result<Option<(f64, Point)>> {
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam("ray direction must be unit length".into()));
    }
    Ok(MeshIndex::new(mesh.clone())
        .first_hit(origin, direction)
        .map(|h| (h.t, h.point)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelParams {
    pub sigma_px: f64,
    pub max_incidence_deg: f64,
    pub icp_max_iter: usize,
    pub icp_tol_m: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            sigma_px: 2.0,
            max_incidence_deg: 80.0,
            icp_max_iter: 200,
            icp_tol_m: 1e-10,
        }
    }
}

impl LabelParams {
    pub fn max_incidence_rad(&self) -> f64 {
        self.max_incidence_deg.to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px > 0.0) || !(0.0..=90.0).contains(&self.max_incidence_deg) || !(self.icp_tol_m >= 0.0) {
            return Err(Error::InvalidParam(format!("{self:?}")));
        }
        Ok(())
    }
}
