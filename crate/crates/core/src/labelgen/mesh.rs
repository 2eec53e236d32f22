use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub type Point = Vector3<f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        TriangleMesh::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Degenerate("non-finite mesh vertex".into()));
        }
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Degenerate(format!("triangle {i} indexes past the vertex list")));
            }
            if self.area(i) <= 1e-12 {
                return Err(Error::Degenerate(format!("triangle {i} has zero area")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, tri: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[tri];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the triangle's winding.
    pub fn normal(&self, tri: usize) -> Point {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn transformed(&self, pose: &Pose) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| pose.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Appends another mesh, re-indexing its triangles.
    pub fn merge(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> PointCloud {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            total += self.area(i);
            cumulative.push(total);
        }
        let mut points = Vec::with_capacity(n);
        if total == 0.0 {
            return PointCloud { points };
        }
        for _ in 0..n {
            let pick = rng.gen::<f64>() * total;
            let tri = cumulative.partition_point(|&c| c < pick).min(cumulative.len() - 1);
            let [a, b, c] = self.corners(tri);
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            points.push(a + (b - a) * u + (c - a) * v);
        }
        PointCloud { points }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
        }
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Möller-Trumbore ray/triangle intersection; returns the ray parameter of a
/// hit in front of the origin (`t > 1e-9`).
#[inline]
pub fn intersect_triangle(origin: &Point, dir: &Point, a: &Point, b: &Point, c: &Point) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    (t > 1e-9).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_point_regions() {
        let a = Point::new(0.0, 0.0, 0.0);
        let b = Point::new(1.0, 0.0, 0.0);
        let c = Point::new(0.0, 1.0, 0.0);
        let cp = |p: Point| closest_point_on_triangle(&p, &a, &b, &c);
        assert!((cp(Point::new(0.2, 0.2, 1.0)) - Point::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(cp(Point::new(-1.0, -1.0, 0.0)), a);
        assert_eq!(cp(Point::new(2.0, -0.5, 0.0)), b);
        assert!((cp(Point::new(0.5, -1.0, 0.3)) - Point::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((cp(Point::new(1.0, 1.0, 0.0)) - Point::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn moller_trumbore_examples() {
        let a = Point::new(0.0, 0.0, 1.0);
        let b = Point::new(1.0, 0.0, 1.0);
        let c = Point::new(0.0, 1.0, 1.0);
        let o = Point::new(0.25, 0.25, 0.0);
        let t = intersect_triangle(&o, &Point::z(), &a, &b, &c).unwrap();
        assert!((t - 1.0).abs() < 1e-15);
        assert!(intersect_triangle(&o, &-Point::z(), &a, &b, &c).is_none());
        assert!(intersect_triangle(&Point::new(2.0, 2.0, 0.0), &Point::z(), &a, &b, &c).is_none());
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let v = vec![Point::zeros(), Point::x(), Point::x() * 2.0];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]]).is_err());
        assert!(TriangleMesh::new(v, vec![[0, 1, 3]]).is_err());
    }
}
