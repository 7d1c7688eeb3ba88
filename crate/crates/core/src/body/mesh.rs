use alloc::vec;
use alloc::vec::Vec;

use super::skeleton::{capsule_sdf, cosine_blend, BodyConfig, BoneSpec};
use crate::autodiff::TexelSupport;
use crate::math::{cos, sin, Aabb, Vec3, PI};
use crate::{Error, Result};

/// One capsule's rectangle in the UV atlas and its tessellation layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub bone: usize,
    /// `[u0, v0, u1, v1]`.
    pub rect: [f64; 4],
    /// Vertices around the capsule.
    pub segments: usize,
    /// Row intervals along the profile (pole to pole).
    pub rows: usize,
    pub first_vertex: usize,
    pub first_face: usize,
    /// Profile arc length `πr + L`.
    pub profile_length: f64,
}

impl Chart {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.rect[0] && u <= self.rect[2] && v >= self.rect[1] && v <= self.rect[3]
    }

    /// `(u, v)` to chart-local `[0,1]²`.
    pub fn local(&self, u: f64, v: f64) -> (f64, f64) {
        (
            ((u - self.rect[0]) / (self.rect[2] - self.rect[0])).clamp(0.0, 1.0),
            ((v - self.rect[1]) / (self.rect[3] - self.rect[1])).clamp(0.0, 1.0),
        )
    }

    fn global(&self, a: f64, b: f64) -> [f64; 2] {
        [
            self.rect[0] + a * (self.rect[2] - self.rect[0]),
            self.rect[1] + b * (self.rect[3] - self.rect[1]),
        ]
    }

    pub fn vertex_count(&self) -> usize {
        2 * self.segments + (self.rows - 1) * (self.segments + 1)
    }

    pub fn face_count(&self) -> usize {
        2 * self.segments + 2 * self.segments * (self.rows - 2)
    }

    fn pole(&self, top: bool, c: usize) -> usize {
        if top {
            self.first_vertex + self.segments + (self.rows - 1) * (self.segments + 1) + c
        } else {
            self.first_vertex + c
        }
    }

    fn ring(&self, k: usize, c: usize) -> usize {
        self.first_vertex + self.segments + (k - 1) * (self.segments + 1) + c
    }
}

/// Rest-pose proxy mesh with skinning weights and UV atlas.
#[derive(Clone, Debug)]
pub struct ProxyMesh {
    pub config: BodyConfig,
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
    /// Chart (= bone) of each face.
    pub face_chart: Vec<u16>,
    /// Faces whose rest centroid lies inside another bone's capsule. They
    /// bound no visible surface, so surface projection skips them.
    pub buried: Vec<bool>,
    /// Sparse skinning weights: up to two `(joint, weight)` pairs.
    pub weights: Vec<[(u16, f64); 2]>,
    pub charts: Vec<Chart>,
    /// Per vertex, the first vertex at the same position (seams and poles).
    pub(crate) rep: Vec<u32>,
    pub rest_normals: Vec<Vec3>,
    /// Faces touching each representative vertex, ascending.
    rep_faces: Vec<Vec<u32>>,
    /// Rest bounds padded by the shell half-width; maps to `[−1, 1]³`.
    pub canonical_box: Aabb,
}

struct Frame {
    a: Vec3,
    e: Vec3,
    e1: Vec3,
    e2: Vec3,
    len: f64,
    r: f64,
}

impl Frame {
    fn new(b: &BoneSpec) -> Self {
        let ab = b.b - b.a;
        let len = ab.norm();
        let e = if len > 1e-12 { ab / len } else { Vec3::Z };
        let e1 = e.any_orthogonal().normalized();
        let e2 = e.cross(e1);
        Self { a: b.a, e, e1, e2, len, r: b.radius }
    }

    fn profile(&self) -> f64 {
        PI * self.r + self.len
    }

    /// Surface point at profile arc length `s` and azimuth `phi`, plus the
    /// axis point it is measured from.
    fn point(&self, s: f64, phi: f64) -> (Vec3, Vec3) {
        let q = 0.5 * PI * self.r;
        let (center, axial, radial) = if s < q {
            let al = s / self.r;
            (self.a, -self.r * cos(al), self.r * sin(al))
        } else if s <= q + self.len {
            (self.a + self.e * (s - q), 0.0, self.r)
        } else {
            let al = (self.profile() - s) / self.r;
            (self.a + self.e * self.len, self.r * cos(al), self.r * sin(al))
        };
        let p = center + self.e * axial + (self.e1 * cos(phi) + self.e2 * sin(phi)) * radial;
        (p, center)
    }
}

fn shelf_pack(sizes: &[(f64, f64)], gutter: f64, scale: f64) -> Option<Vec<[f64; 2]>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&i, &j| sizes[j].1.partial_cmp(&sizes[i].1).unwrap().then(i.cmp(&j)));
    let mut pos = vec![[0.0; 2]; sizes.len()];
    let (mut x, mut y, mut shelf) = (gutter, gutter, 0.0f64);
    for &i in &order {
        let (w, h) = (sizes[i].0 * scale, sizes[i].1 * scale);
        if x + w + gutter > 1.0 && x > gutter {
            y += shelf + gutter;
            x = gutter;
            shelf = 0.0;
        }
        if x + w + gutter > 1.0 {
            return None;
        }
        pos[i] = [x, y];
        x += w + gutter;
        shelf = shelf.max(h);
    }
    (y + shelf + gutter <= 1.0).then_some(pos)
}

impl ProxyMesh {
    pub fn build(config: &BodyConfig) -> Result<Self> {
        config.validate()?;
        let frames: Vec<Frame> = config.bones.iter().map(Frame::new).collect();
        // chart rectangles sized by circumference × profile length
        let sizes: Vec<(f64, f64)> = frames.iter().map(|f| (2.0 * PI * f.r, f.profile())).collect();
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if shelf_pack(&sizes, config.gutter, mid).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let placed = shelf_pack(&sizes, config.gutter, lo)
            .ok_or_else(|| Error::invalid("body", "UV charts do not fit the atlas"))?;

        let mut m = ProxyMesh {
            config: config.clone(),
            vertices: Vec::new(),
            uvs: Vec::new(),
            faces: Vec::new(),
            face_chart: Vec::new(),
            buried: Vec::new(),
            weights: Vec::new(),
            charts: Vec::new(),
            rep: Vec::new(),
            rest_normals: Vec::new(),
            rep_faces: Vec::new(),
            canonical_box: Aabb::EMPTY,
        };
        for (j, f) in frames.iter().enumerate() {
            let s_len = f.profile();
            let segments = config.min_segments.max(libm::ceil(2.0 * PI * f.r / config.edge_length) as usize);
            let rows = 4usize.max(libm::ceil(s_len / config.edge_length) as usize);
            let [x, y] = placed[j];
            let chart = Chart {
                bone: j,
                rect: [x, y, x + sizes[j].0 * lo, y + sizes[j].1 * lo],
                segments,
                rows,
                first_vertex: m.vertices.len(),
                first_face: m.faces.len(),
                profile_length: s_len,
            };
            let bone = &config.bones[j];
            let push = |m: &mut ProxyMesh, s: f64, phi: f64, uv: [f64; 2], rep: usize| {
                let (p, _) = f.point(s, phi);
                m.vertices.push(p);
                m.uvs.push(uv);
                m.rep.push(rep as u32);
                let w = match (bone.blend, bone.parent) {
                    (true, Some(par)) => {
                        let ws = cosine_blend((p - bone.joint).dot(f.e), config.blend_half_width);
                        if ws >= 1.0 {
                            [(j as u16, 1.0), (par as u16, 0.0)]
                        } else {
                            [(j as u16, ws), (par as u16, 1.0 - ws)]
                        }
                    }
                    _ => [(j as u16, 1.0), (j as u16, 0.0)],
                };
                m.weights.push(w);
            };
            let base = chart.first_vertex;
            for c in 0..segments {
                push(&mut m, 0.0, 0.0, chart.global((c as f64 + 0.5) / segments as f64, 0.0), base);
            }
            for k in 1..rows {
                let s = k as f64 * s_len / rows as f64;
                let row_first = chart.ring(k, 0);
                for c in 0..=segments {
                    let phi = 2.0 * PI * c as f64 / segments as f64;
                    let rep = if c == segments { row_first } else { row_first + c };
                    push(&mut m, s, phi, chart.global(c as f64 / segments as f64, k as f64 / rows as f64), rep);
                }
            }
            let top_first = chart.pole(true, 0);
            for c in 0..segments {
                push(&mut m, s_len, 0.0, chart.global((c as f64 + 0.5) / segments as f64, 1.0), top_first);
            }
            // faces in row-major order: bottom fan, quad rows, top fan
            let mut tris: Vec<[usize; 3]> = Vec::with_capacity(chart.face_count());
            for c in 0..segments {
                tris.push([chart.pole(false, c), chart.ring(1, c), chart.ring(1, c + 1)]);
            }
            for k in 1..rows - 1 {
                for c in 0..segments {
                    let (p00, p01) = (chart.ring(k, c), chart.ring(k, c + 1));
                    let (p10, p11) = (chart.ring(k + 1, c), chart.ring(k + 1, c + 1));
                    tris.push([p00, p01, p11]);
                    tris.push([p00, p11, p10]);
                }
            }
            for c in 0..segments {
                tris.push([chart.ring(rows - 1, c), chart.ring(rows - 1, c + 1), chart.pole(true, c)]);
            }
            for t in tris {
                let (p0, p1, p2) = (m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
                let n = (p1 - p0).cross(p2 - p0);
                let cen = (p0 + p1 + p2) / 3.0;
                // outward: away from the capsule axis segment
                let ax = closest_on_segment(cen, f.a, f.a + f.e * f.len);
                let t = if n.dot(cen - ax) < 0.0 { [t[0], t[2], t[1]] } else { t };
                m.faces.push([t[0] as u32, t[1] as u32, t[2] as u32]);
                m.face_chart.push(j as u16);
                let inside_other = config
                    .bones
                    .iter()
                    .enumerate()
                    .any(|(k, b)| k != j && capsule_sdf(cen, b.a, b.b, b.radius) < 0.0);
                m.buried.push(inside_other);
            }
            m.charts.push(chart);
        }
        m.rest_normals = m.vertex_normals(&m.vertices);
        m.rep_faces = vec![Vec::new(); m.vertices.len()];
        for (fi, f) in m.faces.iter().enumerate() {
            for &i in f {
                m.rep_faces[m.rep[i as usize] as usize].push(fi as u32);
            }
        }
        let mut bb = Aabb::EMPTY;
        m.vertices.iter().for_each(|p| bb.grow(*p));
        m.canonical_box = bb.padded(config.shell_half_width);
        Ok(m)
    }

    pub fn joint_count(&self) -> usize {
        self.config.bones.len()
    }

    /// Dense row of skinning weights for vertex `v`.
    pub fn weight_row(&self, v: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.joint_count()];
        for (j, w) in self.weights[v] {
            row[j as usize] += w;
        }
        row
    }

    /// Area-weighted vertex normals for the given vertex positions, shared
    /// across coincident seam and pole copies.
    pub fn vertex_normals(&self, verts: &[Vec3]) -> Vec<Vec3> {
        let mut acc = vec![Vec3::ZERO; verts.len()];
        for f in &self.faces {
            let (a, b, c) = (verts[f[0] as usize], verts[f[1] as usize], verts[f[2] as usize]);
            let n = (b - a).cross(c - a);
            for &i in f {
                acc[self.rep[i as usize] as usize] += n;
            }
        }
        (0..verts.len()).map(|i| acc[self.rep[i] as usize].normalized()).collect()
    }

    pub fn face_normal(&self, verts: &[Vec3], f: usize) -> Vec3 {
        let t = self.faces[f];
        let (a, b, c) = (verts[t[0] as usize], verts[t[1] as usize], verts[t[2] as usize]);
        (b - a).cross(c - a).normalized()
    }

    /// Chart containing atlas position `(u, v)`, if any.
    pub fn chart_at(&self, u: f64, v: f64) -> Option<usize> {
        self.charts.iter().position(|c| c.contains(u, v))
    }

    /// Face and barycentric weights of atlas position `(u, v)`; `None` in the
    /// gutter. Quads are indexed directly from the chart layout.
    pub fn locate_uv(&self, u: f64, v: f64) -> Option<(usize, [f64; 3])> {
        let ci = self.chart_at(u, v)?;
        let ch = &self.charts[ci];
        let (a, b) = ch.local(u, v);
        let fa = a * ch.segments as f64;
        let fb = b * ch.rows as f64;
        let col = (fa as usize).min(ch.segments - 1);
        let row = (fb as usize).min(ch.rows - 1);
        let (xa, xb) = (fa - col as f64, fb - row as f64);
        let local = if row == 0 {
            col
        } else if row == ch.rows - 1 {
            ch.segments + 2 * ch.segments * (ch.rows - 2) + col
        } else {
            let k = ch.segments + 2 * ((row - 1) * ch.segments + col);
            if xa >= xb { k } else { k + 1 }
        };
        let face = ch.first_face + local;
        let t = self.faces[face];
        let p = [u, v];
        let bary = uv_barycentric(p, self.uvs[t[0] as usize], self.uvs[t[1] as usize], self.uvs[t[2] as usize]);
        Some((face, bary))
    }

    /// Re-expresses a point on an edge or corner of `face` in the
    /// lowest-index face sharing that edge or corner. Pole fans and the
    /// cylinder seam duplicate vertices with different UVs, so without this
    /// the same surface point could get two atlas positions.
    pub fn canonical_site(&self, face: usize, bary: [f64; 3]) -> (usize, [f64; 3]) {
        const EPS: f64 = 1e-9;
        let t = self.faces[face];
        let live: Vec<usize> = (0..3).filter(|k| bary[*k] > EPS).collect();
        if live.len() == 3 || live.is_empty() {
            return (face, bary);
        }
        let reps: Vec<u32> = live.iter().map(|k| self.rep[t[*k] as usize]).collect();
        let total: f64 = live.iter().map(|k| bary[*k]).sum();
        for &f in &self.rep_faces[reps[0] as usize] {
            let tf = self.faces[f as usize];
            let mut nb = [0.0; 3];
            let mut found = 0;
            for c in 0..3 {
                if let Some(j) = reps.iter().position(|r| *r == self.rep[tf[c] as usize]) {
                    nb[c] = bary[live[j]] / total;
                    found += 1;
                }
            }
            if found == reps.len() {
                return (f as usize, nb);
            }
        }
        (face, bary)
    }

    /// Interpolated atlas position for a point given by face and weights.
    pub fn uv_at(&self, face: usize, bary: [f64; 3]) -> [f64; 2] {
        let t = self.faces[face];
        let mut uv = [0.0; 2];
        for k in 0..3 {
            let q = self.uvs[t[k] as usize];
            uv[0] += bary[k] * q[0];
            uv[1] += bary[k] * q[1];
        }
        uv
    }

    /// Chart labels (chart index + 1, 0 in the gutter) of an `n × n` raster
    /// whose texel centres sit at `(j + ½)/n, (i + ½)/n`.
    pub fn texel_support(&self, n: usize) -> TexelSupport {
        let labels = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let (u, v) = ((j as f64 + 0.5) / n as f64, (i as f64 + 0.5) / n as f64);
                self.chart_at(u, v).map_or(0, |c| c as u16 + 1)
            })
            .collect();
        TexelSupport { height: n, width: n, labels }
    }

    /// Face and weights for every texel centre of an `n × n` raster.
    pub fn texel_bindings(&self, n: usize) -> Vec<Option<(usize, [f64; 3])>> {
        (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                self.locate_uv((j as f64 + 0.5) / n as f64, (i as f64 + 0.5) / n as f64)
            })
            .collect()
    }

    /// Rest position to canonical `[−1, 1]³`, per axis.
    pub fn normalize_canonical(&self, p: Vec3) -> Vec3 {
        let (lo, hi) = (self.canonical_box.min, self.canonical_box.max);
        Vec3::new(
            2.0 * (p.x - lo.x) / (hi.x - lo.x) - 1.0,
            2.0 * (p.y - lo.y) / (hi.y - lo.y) - 1.0,
            2.0 * (p.z - lo.z) / (hi.z - lo.z) - 1.0,
        )
    }

    pub fn denormalize_canonical(&self, c: Vec3) -> Vec3 {
        let (lo, hi) = (self.canonical_box.min, self.canonical_box.max);
        Vec3::new(
            lo.x + 0.5 * (c.x + 1.0) * (hi.x - lo.x),
            lo.y + 0.5 * (c.y + 1.0) * (hi.y - lo.y),
            lo.z + 0.5 * (c.z + 1.0) * (hi.z - lo.z),
        )
    }
}

pub(crate) fn closest_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let ab = b - a;
    let l2 = ab.norm_sq();
    if l2 <= 0.0 {
        return a;
    }
    a + ab * ((p - a).dot(ab) / l2).clamp(0.0, 1.0)
}

/// Barycentric weights of `p` in a UV triangle, clamped to the triangle.
fn uv_barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 3] {
    let (v0, v1, v2) = ([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]], [p[0] - a[0], p[1] - a[1]]);
    let den = v0[0] * v1[1] - v1[0] * v0[1];
    if den.abs() < 1e-300 {
        return [1.0, 0.0, 0.0];
    }
    let l1 = (v2[0] * v1[1] - v1[0] * v2[1]) / den;
    let l2 = (v0[0] * v2[1] - v2[0] * v0[1]) / den;
    let w = [1.0 - l1 - l2, l1, l2];
    if w.iter().all(|x| *x >= 0.0) {
        return w;
    }
    let w = w.map(|x| x.max(0.0));
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}
