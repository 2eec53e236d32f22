//! Built-in phantom meshes. Frames look along +z, so "depth" is z and
//! elevation is y.

use std::f64::consts::PI;

use crate::geometry::Pose;
use crate::labelgen::{Point, TriangleMesh};

fn grid_mesh(nu: usize, nv: usize, at: impl Fn(f64, f64) -> Point) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    for j in 0..=nv {
        for i in 0..=nu {
            vertices.push(at(i as f64 / nu as f64, j as f64 / nv as f64));
        }
    }
    let idx = |i: usize, j: usize| j * (nu + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh { vertices, triangles }
}

/// Square plate in the plane z = `depth`, centred on the z axis.
pub fn flat_plate(depth: f64, half_extent: f64, divisions: usize) -> TriangleMesh {
    let n = divisions.max(1);
    grid_mesh(n, n, |u, v| {
        Point::new((2.0 * u - 1.0) * half_extent, (2.0 * v - 1.0) * half_extent, depth)
    })
}

/// Flat plate rotated by `tilt_rad` about the elevation (y) axis through
/// (0, 0, depth).
pub fn tilted_plate(depth: f64, half_extent: f64, tilt_rad: f64, divisions: usize) -> TriangleMesh {
    let centre = Point::new(0.0, 0.0, depth);
    let rot = Pose::from_axis_angle(&Point::y(), tilt_rad);
    let pose = Pose::from_translation(centre).compose(&rot).compose(&Pose::from_translation(-centre));
    flat_plate(depth, half_extent, divisions).transformed(&pose)
}

/// Open tube of `radius` whose axis runs along y through (0, 0, depth).
pub fn cylinder(depth: f64, radius: f64, half_length: f64, segments: usize, rings: usize) -> TriangleMesh {
    let segs = segments.max(3);
    let tube = grid_mesh(segs, rings.max(1), |u, v| {
        let phi = 2.0 * PI * u;
        Point::new(radius * phi.cos(), (2.0 * v - 1.0) * half_length, depth + radius * phi.sin())
    });
    weld_seam(tube, segs)
}

/// Triangular prism whose ridge runs along y at z = `ridge_depth`; the two
/// roof faces descend by `height` over a half-width of `half_width`.
pub fn wedge_prism(ridge_depth: f64, half_width: f64, height: f64, half_length: f64, divisions: usize) -> TriangleMesh {
    let n = divisions.max(1);
    let mut mesh = grid_mesh(n, n, |u, v| {
        Point::new(-half_width * (1.0 - u), (2.0 * v - 1.0) * half_length, ridge_depth + height * (1.0 - u))
    });
    mesh.merge(&grid_mesh(n, n, |u, v| {
        Point::new(half_width * u, (2.0 * v - 1.0) * half_length, ridge_depth + height * u)
    }));
    mesh.merge(&grid_mesh(n, n, |u, v| {
        Point::new((2.0 * u - 1.0) * half_width, (2.0 * v - 1.0) * half_length, ridge_depth + height)
    }));
    mesh
}

/// Coarse vertebra: a spinous-process wedge with two laminae that slope
/// down and away from it. Sizes are in millimetres times `scale`.
pub fn vertebra(ridge_depth: f64, scale: f64) -> TriangleMesh {
    let mm = 1e-3 * scale;
    let half_length = 20.0 * mm;
    let mut mesh = wedge_prism(ridge_depth, 5.0 * mm, 7.0 * mm, half_length, 6);
    for side in [-1.0, 1.0] {
        mesh.merge(&grid_mesh(8, 8, |u, v| {
            let x = side * (7.0 + 11.0 * u) * mm;
            Point::new(x, (2.0 * v - 1.0) * half_length, ridge_depth + (10.0 + 3.0 * u) * mm)
        }));
    }
    mesh
}

/// Closed ellipsoid with semi-axes `radii` and an asymmetric radial
/// perturbation, so rigid registration against it has a unique solution.
pub fn lumpy_blob(centre: Point, radii: Point, stacks: usize, slices: usize) -> TriangleMesh {
    let stacks = stacks.max(3);
    let slices = slices.max(3);
    let r_at = |theta: f64, phi: f64| {
        1.0 + 0.18 * (2.0 * theta).sin() * phi.cos()
                + 0.12 * (3.0 * theta).cos() * (2.0 * phi + 0.4).sin()
                + 0.08 * (theta + 0.3).sin() * (phi - 1.1).sin()
    };
    let dir = |theta: f64, phi: f64| {
        Point::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()).component_mul(&radii)
    };
    let mut vertices = vec![centre + dir(0.0, 0.0) * r_at(0.0, 0.0)];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(centre + dir(theta, phi) * r_at(theta, phi));
        }
    }
    vertices.push(centre + dir(PI, 0.0) * r_at(PI, 0.0));
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut triangles = Vec::new();
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
        triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            triangles.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            triangles.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    TriangleMesh { vertices, triangles }
}

/// Welds the duplicated u = 1 column of a wrapped grid onto u = 0.
fn weld_seam(mut mesh: TriangleMesh, segs: usize) -> TriangleMesh {
    let stride = segs + 1;
    for v in mesh.triangles.iter_mut().flatten() {
        if *v % stride == segs {
            *v -= segs;
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_valid() {
        for mesh in [
            flat_plate(0.03, 0.02, 8),
            tilted_plate(0.03, 0.02, 0.4, 8),
            cylinder(0.03, 0.008, 0.02, 24, 4),
            wedge_prism(0.02, 0.01, 0.01, 0.02, 4),
            lumpy_blob(Point::new(0.0, 0.0, 0.03), Point::new(0.014, 0.009, 0.006), 12, 16),
            vertebra(0.02, 1.0),
        ] {
            mesh.validate().unwrap();
            assert!(!mesh.is_empty());
        }
    }

    #[test]
    fn cylinder_vertices_on_surface() {
        let m = cylinder(0.03, 0.008, 0.02, 24, 4);
        for v in &m.vertices {
            assert!(((v.x).hypot(v.z - 0.03) - 0.008).abs() < 1e-12);
        }
    }
}
