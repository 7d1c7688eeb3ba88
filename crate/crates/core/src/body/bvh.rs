//! Bounding-volume hierarchy over triangles for nearest-point and ray
//! queries. Ties on distance go to the lowest face id.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{Aabb, Vec3};

#[derive(Clone, Debug)]
struct Node {
    bbox: Aabb,
    /// Leaf: first index into `order`; inner: index of left child.
    start: u32,
    /// Leaf triangle count, 0 for inner nodes (right child is `start + 1`).
    count: u32,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

/// Closest point on a triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearestHit {
    pub face: usize,
    pub point: Vec3,
    pub bary: [f64; 3],
    pub dist_sq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub face: usize,
    pub t: f64,
    pub bary: [f64; 3],
}

const LEAF: usize = 4;

impl Bvh {
    pub fn build(verts: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let tri_box = |f: usize| {
            let mut b = Aabb::EMPTY;
            for &i in &faces[f] {
                b.grow(verts[i as usize]);
            }
            b
        };
        let boxes: Vec<Aabb> = (0..faces.len()).map(tri_box).collect();
        let cents: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let mut nodes = vec![Node { bbox: Aabb::EMPTY, start: 0, count: 0 }];
        // explicit stack of (node, lo, hi)
        let mut stack = vec![(0usize, 0usize, faces.len())];
        while let Some((ni, lo, hi)) = stack.pop() {
            let mut bb = Aabb::EMPTY;
            for &f in &order[lo..hi] {
                bb = bb.union(&boxes[f as usize]);
            }
            nodes[ni].bbox = bb;
            if hi - lo <= LEAF {
                nodes[ni].start = lo as u32;
                nodes[ni].count = (hi - lo) as u32;
                continue;
            }
            let mut cb = Aabb::EMPTY;
            for &f in &order[lo..hi] {
                cb.grow(cents[f as usize]);
            }
            let ext = cb.extent();
            let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
            order[lo..hi].sort_by(|&a, &b| {
                cents[a as usize][axis]
                    .partial_cmp(&cents[b as usize][axis])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mid = (lo + hi) / 2;
            let left = nodes.len();
            nodes.push(Node { bbox: Aabb::EMPTY, start: 0, count: 0 });
            nodes.push(Node { bbox: Aabb::EMPTY, start: 0, count: 0 });
            nodes[ni].start = left as u32;
            nodes[ni].count = 0;
            stack.push((left, lo, mid));
            stack.push((left + 1, mid, hi));
        }
        Self { nodes, order }
    }

    /// Nearest triangle to `p` within `sqrt(max_dist_sq)`.
    pub fn nearest(&self, verts: &[Vec3], faces: &[[u32; 3]], p: Vec3, max_dist_sq: f64) -> Option<NearestHit> {
        let mut best: Option<NearestHit> = None;
        let mut best_d = max_dist_sq;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let n = &self.nodes[ni];
            if n.bbox.dist_sq(p) > best_d {
                continue;
            }
            if n.count > 0 {
                for &f in &self.order[n.start as usize..(n.start + n.count) as usize] {
                    let t = faces[f as usize];
                    let (q, bary) = closest_point_triangle(p, verts[t[0] as usize], verts[t[1] as usize], verts[t[2] as usize]);
                    let d = (p - q).norm_sq();
                    let better = match best {
                        None => d <= best_d,
                        Some(b) => d < b.dist_sq || (d == b.dist_sq && (f as usize) < b.face),
                    };
                    if better {
                        best = Some(NearestHit { face: f as usize, point: q, bary, dist_sq: d });
                        best_d = d;
                    }
                }
            } else {
                let (l, r) = (n.start as usize, n.start as usize + 1);
                let (dl, dr) = (self.nodes[l].bbox.dist_sq(p), self.nodes[r].bbox.dist_sq(p));
                // visit the nearer child first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    /// First intersection of `o + t·d` with `t ∈ (tmin, tmax)`.
    pub fn raycast(&self, verts: &[Vec3], faces: &[[u32; 3]], o: Vec3, d: Vec3, tmin: f64, tmax: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut best_t = tmax;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let n = &self.nodes[ni];
            match n.bbox.ray_interval(o, d, tmin, best_t) {
                Some((t0, _)) if t0 <= best_t => {}
                _ => continue,
            }
            if n.count > 0 {
                for &f in &self.order[n.start as usize..(n.start + n.count) as usize] {
                    let t = faces[f as usize];
                    if let Some((th, bary)) = ray_triangle(o, d, verts[t[0] as usize], verts[t[1] as usize], verts[t[2] as usize]) {
                        if th <= tmin || th > best_t {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some(b) => th < b.t || (th == b.t && (f as usize) < b.face),
                        };
                        if better {
                            best = Some(RayHit { face: f as usize, t: th, bary });
                            best_t = th;
                        }
                    }
                }
            } else {
                stack.push(n.start as usize + 1);
                stack.push(n.start as usize);
            }
        }
        best
    }
}

/// Closest point on triangle `abc` to `p` and its barycentric weights.
pub fn closest_point_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let den = 1.0 / (va + vb + vc);
    let v = vb * den;
    let w = vc * den;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Möller–Trumbore; returns `t` and barycentric weights.
pub fn ray_triangle(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = d.cross(e2);
    let det = e1.dot(pv);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = o - a;
    let u = tv.dot(pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(e1);
    let v = d.dot(qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((e2.dot(qv) * inv, [1.0 - u - v, u, v]))
}
