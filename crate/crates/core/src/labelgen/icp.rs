use nalgebra::{Matrix3, SVD};

use super::bvh::MeshIndex;
use super::mesh::{Point, PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the target surface.
    pub transform: Pose,
    pub rmse_m: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMSE at the initial pose and after every accepted update.
    pub rmse_history: Vec<f64>,
}

/// Least-squares rigid transform taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Point], dst: &[Point]) -> Result<Pose> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Degenerate(format!(
            "correspondence sets of size {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Point>() / n;
    let cd = dst.iter().sum::<Point>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - cs) * (q - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Degenerate("SVD failed".into())),
    };
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Point::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    Ok(Pose::new(r, cd - r * cs))
}

fn check_spread(points: &[Point]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{} source points, need 3", points.len())));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::Degenerate("non-finite source point".into()));
    }
    let c = points.iter().sum::<Point>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        cov += (p - c) * (p - c).transpose();
    }
    let mut sv = cov.symmetric_eigenvalues();
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) || sv[0] <= 0.0 {
        return Err(Error::Degenerate("source points are collinear".into()));
    }
    Ok(())
}

fn rmse(moved: &[Point], closest: &[Point]) -> f64 {
    let sum: f64 = moved.iter().zip(closest).map(|(a, b)| (a - b).norm_squared()).sum();
    (sum / moved.len() as f64).sqrt()
}

/// Point-to-point ICP against the surface of an indexed mesh.
pub fn icp_register_indexed(
    source: &PointCloud,
    target: &MeshIndex,
    max_iter: usize,
    tol: f64,
    init: &Pose,
) -> Result<IcpResult> {
    check_spread(&source.points)?;
    if target.mesh().is_empty() {
        return Err(Error::Degenerate("target mesh has no triangles".into()));
    }
    target.mesh().validate()?;
    let correspond = |pose: &Pose| -> (Vec<Point>, Vec<Point>) {
        let moved: Vec<Point> = source.points.iter().map(|p| pose.apply(p)).collect();
        let closest = moved
            .iter()
            .map(|p| target.closest_point(p).map(|(q, _)| q).unwrap_or(*p))
            .collect();
        (moved, closest)
    };

    let mut pose = *init;
    let (mut moved, mut closest) = correspond(&pose);
    let mut current = rmse(&moved, &closest);
    let mut history = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let step = kabsch(&moved, &closest)?;
        let candidate = step.compose(&pose);
        let (m, c) = correspond(&candidate);
        let next = rmse(&m, &c);
        iterations += 1;
        // A Kabsch step cannot raise the error for fixed correspondences and
        // re-matching only lowers it further; guard against round-off anyway.
        if next > current {
            converged = true;
            break;
        }
        let improvement = current - next;
        pose = candidate;
        moved = m;
        closest = c;
        current = next;
        history.push(current);
        if improvement < tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform: pose,
        rmse_m: current,
        iterations,
        converged,
        rmse_history: history,
    })
}

/// Builds a BVH over `target` and runs [`icp_register_indexed`].
pub fn icp_register(
    source: &PointCloud,
    target: &TriangleMesh,
    max_iter: usize,
    tol: f64,
    init: &Pose,
) -> Result<IcpResult> {
    icp_register_indexed(source, &MeshIndex::new(target.clone()), max_iter, tol, init)
}
