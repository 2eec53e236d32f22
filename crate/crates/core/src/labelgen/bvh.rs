//! Axis-aligned bounding volume hierarchy over mesh triangles.

use super::mesh::{closest_point_on_triangle, intersect_triangle, Point, TriangleMesh};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Point,
    max: Point,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Point::repeat(f64::INFINITY),
            max: Point::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn union(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn ray_entry(&self, origin: &Point, inv_dir: &Point, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN from 0 * inf means the origin lies on the slab plane
            if near.is_nan() || far.is_nan() {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far * (1.0 + 4.0 * f64::EPSILON));
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    fn distance_sq(&self, p: &Point) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.min[a] {
                self.min[a] - p[a]
            } else if p[a] > self.max[a] {
                p[a] - self.max[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// First intersection along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: Point,
    pub triangle: usize,
}

/// Immutable triangle mesh with a median-split BVH.
#[derive(Clone, Debug)]
pub struct MeshIndex {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl MeshIndex {
    pub fn new(mesh: TriangleMesh) -> Self {
        let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
        let centroids: Vec<Point> = (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.corners(i);
                (a + b + c) / 3.0
            })
            .collect();
        let boxes: Vec<Aabb> = (0..mesh.triangles.len())
            .map(|i| {
                let mut bb = Aabb::empty();
                for p in mesh.corners(i) {
                    bb.grow(&p);
                }
                bb
            })
            .collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            let n = order.len();
            build(&mut nodes, &mut order, 0, n, &centroids, &boxes);
        }
        MeshIndex { mesh, nodes, order }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Nearest hit with `t > 1e-9`.
    pub fn first_hit(&self, origin: &Point, dir: &Point) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Point::new(1.0 / dir[0], 1.0 / dir[1], 1.0 / dir[2]);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let t_max = best.map_or(f64::INFINITY, |b| b.0);
            if self.nodes[idx].bounds().ray_entry(origin, &inv_dir, t_max).is_none() {
                continue;
            }
            match &self.nodes[idx] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[*start..*end] {
                        let [a, b, c] = self.mesh.corners(tri);
                        if let Some(t) = intersect_triangle(origin, dir, &a, &b, &c) {
                            if best.is_none_or(|(bt, bi)| t < bt || (t == bt && tri < bi)) {
                                best = Some((t, tri));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best.map(|(t, triangle)| RayHit {
            t,
            point: origin + dir * t,
            triangle,
        })
    }

    /// Closest surface point and its triangle.
    pub fn closest_point(&self, p: &Point) -> Option<(Point, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, Point::zeros(), 0usize);
        let mut stack = vec![(0usize, self.nodes[0].bounds().distance_sq(p))];
        while let Some((idx, d)) = stack.pop() {
            if d >= best.0 {
                continue;
            }
            match &self.nodes[idx] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[*start..*end] {
                        let [a, b, c] = self.mesh.corners(tri);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let dq = (q - p).norm_squared();
                        if dq < best.0 {
                            best = (dq, q, tri);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_sq(p);
                    let dr = self.nodes[*right].bounds().distance_sq(p);
                    // visit the nearer child first
                    if dl <= dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        Some((best.1, best.2))
    }
}

fn build(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    centroids: &[Point],
    boxes: &[Aabb],
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &i in &order[start..end] {
        bounds.union(&boxes[i]);
        cbounds.grow(&centroids[i]);
    }
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let extent = cbounds.max - cbounds.min;
    let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
        0
    } else if extent[1] >= extent[2] {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build(nodes, order, start, mid, centroids, boxes);
    let right = build(nodes, order, mid, end, centroids, boxes);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}

/// Exhaustive first-hit search; reference for the BVH.
pub fn ray_cast_brute_force(mesh: &TriangleMesh, origin: &Point, dir: &Point) -> Option<RayHit> {
    let mut best: Option<(f64, usize)> = None;
    for tri in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(tri);
        if let Some(t) = intersect_triangle(origin, dir, &a, &b, &c) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, tri));
            }
        }
    }
    best.map(|(t, triangle)| RayHit {
        t,
        point: origin + dir * t,
        triangle,
    })
}

/// Exhaustive closest-point search; reference for the BVH.
pub fn closest_point_brute_force(mesh: &TriangleMesh, p: &Point) -> Option<(Point, usize)> {
    let mut best: Option<(f64, Point, usize)> = None;
    for tri in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(tri);
        let q = closest_point_on_triangle(p, &a, &b, &c);
        let d = (q - p).norm_squared();
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, q, tri));
        }
    }
    best.map(|(_, q, t)| (q, t))
}
