use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::bvh::{Bvh, NearestHit, RayHit};
use super::mesh::ProxyMesh;
use super::skeleton::Pose;
use crate::math::{sqrt, Affine, Vec3};
use crate::{Error, Result};

/// Local surface coordinates of a point near the body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalCoords {
    pub u: f64,
    pub v: f64,
    /// Signed distance, positive outside.
    pub h: f64,
    pub face: usize,
    pub bary: [f64; 3],
    /// Nearest surface point.
    pub surface: Vec3,
}

/// Surface point with an orthonormal `(tangent, bitangent, normal)` frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceFrame {
    pub point: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
    pub normal: Vec3,
    pub face: usize,
    pub bary: [f64; 3],
}

/// The proxy body in one pose, with its BVH.
#[derive(Clone, Debug)]
pub struct PosedBody {
    pub mesh: Arc<ProxyMesh>,
    pub pose: Pose,
    /// `global ∘ G_j` for each joint.
    pub bones: Vec<Affine>,
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub face_normals: Vec<Vec3>,
    bvh: Bvh,
    /// Over the unburied faces only, for surface projection.
    surface_bvh: Bvh,
    surface_tris: Vec<[u32; 3]>,
    surface_faces: Vec<u32>,
}

/// Skinned vertex positions `R·(Σ w_j G_j v) + T`.
pub fn pose_mesh(mesh: &ProxyMesh, pose: &Pose) -> Result<Vec<Vec3>> {
    pose.validate(mesh.joint_count())?;
    let g = pose.bone_transforms(&mesh.config);
    let glob = pose.global();
    Ok(mesh
        .vertices
        .iter()
        .zip(&mesh.weights)
        .map(|(v, w)| {
            let mut p = Vec3::ZERO;
            for &(j, wj) in w {
                if wj != 0.0 {
                    p += g[j as usize].apply(*v) * wj;
                }
            }
            glob.apply(p)
        })
        .collect())
}

impl PosedBody {
    pub fn new(mesh: Arc<ProxyMesh>, pose: &Pose) -> Result<Self> {
        let vertices = pose_mesh(&mesh, pose)?;
        let glob = pose.global();
        let bones = pose.bone_transforms(&mesh.config).iter().map(|g| glob.compose(g)).collect();
        let normals = mesh.vertex_normals(&vertices);
        let face_normals = (0..mesh.faces.len()).map(|f| mesh.face_normal(&vertices, f)).collect();
        let bvh = Bvh::build(&vertices, &mesh.faces);
        let surface_faces: Vec<u32> = (0..mesh.faces.len()).filter(|f| !mesh.buried[*f]).map(|f| f as u32).collect();
        let surface_tris: Vec<[u32; 3]> = surface_faces.iter().map(|f| mesh.faces[*f as usize]).collect();
        let surface_bvh = Bvh::build(&vertices, &surface_tris);
        Ok(Self { mesh, pose: pose.clone(), bones, vertices, normals, face_normals, bvh, surface_bvh, surface_tris, surface_faces })
    }

    pub fn rest(mesh: Arc<ProxyMesh>) -> Result<Self> {
        let n = mesh.joint_count();
        Self::new(mesh, &Pose::identity(n))
    }

    pub fn half_width(&self) -> f64 {
        self.mesh.config.shell_half_width
    }

    /// Nearest unburied triangle within `max_dist`.
    pub fn nearest(&self, x: Vec3, max_dist: f64) -> Option<NearestHit> {
        let mut h = self.surface_bvh.nearest(&self.vertices, &self.surface_tris, x, max_dist * max_dist)?;
        h.face = self.surface_faces[h.face] as usize;
        Some(h)
    }

    /// Nearest unburied triangle by exhaustive search (reference for the BVH).
    pub fn nearest_brute(&self, x: Vec3) -> NearestHit {
        let mut best: Option<NearestHit> = None;
        for (f, t) in self.mesh.faces.iter().enumerate() {
            if self.mesh.buried[f] {
                continue;
            }
            let (q, bary) = super::bvh::closest_point_triangle(
                x,
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            );
            let d = (x - q).norm_sq();
            if best.map_or(true, |b| d < b.dist_sq) {
                best = Some(NearestHit { face: f, point: q, bary, dist_sq: d });
            }
        }
        best.expect("mesh has faces")
    }

    fn coords_from_hit(&self, x: Vec3, hit: NearestHit) -> LocalCoords {
        let d = sqrt(hit.dist_sq);
        let sign = if (x - hit.point).dot(self.face_normals[hit.face]) < 0.0 { -1.0 } else { 1.0 };
        let (face, bary) = self.mesh.canonical_site(hit.face, hit.bary);
        let [u, v] = self.mesh.uv_at(face, bary);
        LocalCoords { u, v, h: sign * d, face, bary, surface: hit.point }
    }

    /// `(u, v, h)` of `x`; `None` when `x` is off-body (farther than the
    /// shell half-width from the surface).
    pub fn project_to_surface(&self, x: Vec3) -> Option<LocalCoords> {
        let hit = self.nearest(x, self.half_width())?;
        Some(self.coords_from_hit(x, hit))
    }

    pub fn project_brute(&self, x: Vec3) -> Option<LocalCoords> {
        let hit = self.nearest_brute(x);
        (hit.dist_sq <= self.half_width() * self.half_width()).then(|| self.coords_from_hit(x, hit))
    }

    /// Point and frame at barycentric position `bary` of `face`.
    pub fn frame_at(&self, face: usize, bary: [f64; 3]) -> SurfaceFrame {
        let t = self.mesh.faces[face];
        let p: [Vec3; 3] = core::array::from_fn(|k| self.vertices[t[k] as usize]);
        let uv: [[f64; 2]; 3] = core::array::from_fn(|k| self.mesh.uvs[t[k] as usize]);
        let point = p[0] * bary[0] + p[1] * bary[1] + p[2] * bary[2];
        let normal = self.face_normals[face];
        // dP/du from the triangle's UV parameterization
        let (e1, e2) = (p[1] - p[0], p[2] - p[0]);
        let (du1, dv1) = (uv[1][0] - uv[0][0], uv[1][1] - uv[0][1]);
        let (du2, dv2) = (uv[2][0] - uv[0][0], uv[2][1] - uv[0][1]);
        let det = du1 * dv2 - du2 * dv1;
        let dpdu = if det.abs() > 1e-300 { (e1 * dv2 - e2 * dv1) / det } else { e1 };
        let mut tangent = dpdu - normal * dpdu.dot(normal);
        if tangent.norm() < 1e-12 {
            tangent = normal.any_orthogonal();
        }
        let tangent = tangent.normalized();
        SurfaceFrame { point, tangent, bitangent: normal.cross(tangent), normal, face, bary }
    }

    /// Smooth (vertex-normal interpolated) shading normal.
    pub fn smooth_normal(&self, face: usize, bary: [f64; 3]) -> Vec3 {
        let t = self.mesh.faces[face];
        (self.normals[t[0] as usize] * bary[0] + self.normals[t[1] as usize] * bary[1] + self.normals[t[2] as usize] * bary[2])
            .normalized()
    }

    /// Surface point and frame for atlas position `(u, v)`.
    pub fn uv_to_surface(&self, u: f64, v: f64) -> Result<SurfaceFrame> {
        let (face, bary) = self
            .mesh
            .locate_uv(u, v)
            .ok_or_else(|| Error::Missing { what: "unmapped texel", id: alloc::format!("({u}, {v})") })?;
        Ok(self.frame_at(face, bary))
    }

    /// Blended bone transform at a surface point.
    pub fn blended_transform(&self, face: usize, bary: [f64; 3]) -> Affine {
        let mut w = vec![0.0; self.bones.len()];
        for (k, &vi) in self.mesh.faces[face].iter().enumerate() {
            for &(j, wj) in &self.mesh.weights[vi as usize] {
                w[j as usize] += bary[k] * wj;
            }
        }
        Affine::blend(w.iter().zip(&self.bones).filter(|(w, _)| **w != 0.0).map(|(w, b)| (*w, *b)))
    }

    /// Rest-pose position of `x`: inverse of the blended transform at the
    /// nearest surface point.
    pub fn unwarp_to_rest(&self, x: Vec3) -> Result<Vec3> {
        let lc = self
            .project_to_surface(x)
            .ok_or_else(|| Error::invalid("canonical_unwarp", "point is off-body"))?;
        self.unwarp_with(x, lc.face, lc.bary)
    }

    pub fn unwarp_with(&self, x: Vec3, face: usize, bary: [f64; 3]) -> Result<Vec3> {
        let a = self.blended_transform(face, bary);
        let inv = a.inverse().ok_or(Error::Singular { what: "blended bone transform" })?;
        Ok(inv.apply(x))
    }

    /// Canonical coordinates in `[−1, 1]³`.
    pub fn canonical_unwarp(&self, x: Vec3) -> Result<Vec3> {
        Ok(self.mesh.normalize_canonical(self.unwarp_to_rest(x)?))
    }

    /// First hit of a ray with the posed mesh.
    pub fn raycast(&self, o: Vec3, d: Vec3, tmin: f64, tmax: f64) -> Option<RayHit> {
        self.bvh.raycast(&self.vertices, &self.mesh.faces, o, d, tmin, tmax)
    }

    /// Smooth surface normal at every texel centre of an `res × res` atlas
    /// (`None` in the gutter and on buried faces).
    pub fn texel_normals(&self, res: usize) -> Vec<Option<Vec3>> {
        self.mesh
            .texel_bindings(res)
            .into_iter()
            .map(|b| b.filter(|(f, _)| !self.mesh.buried[*f]).map(|(f, bary)| self.smooth_normal(f, bary)))
            .collect()
    }

    /// Hard visibility of every texel-centre surface point toward each of
    /// `dirs`: 1 when the ray from the point (lifted by `lift` along the face
    /// normal) escapes the posed mesh, 0 when it hits it or faces away.
    /// `None` in the gutter and on buried faces.
    pub fn texel_visibility(&self, res: usize, dirs: &[Vec3], lift: f64) -> Vec<Option<Vec<f32>>> {
        let bind = self.mesh.texel_bindings(res);
        crate::par::map_range(res * res, |k| {
            let (face, bary) = bind[k].filter(|(f, _)| !self.mesh.buried[*f])?;
            let f = self.frame_at(face, bary);
            let n = self.smooth_normal(face, bary);
            let o = f.point + f.normal * lift;
            Some(
                dirs.iter()
                    .map(|d| {
                        let open = d.dot(n) > 0.0 && self.raycast(o, *d, 0.0, f64::INFINITY).is_none();
                        f32::from(u8::from(open))
                    })
                    .collect(),
            )
        })
    }

    /// Bounds of the posed vertices.
    pub fn bounds(&self) -> crate::math::Aabb {
        let mut b = crate::math::Aabb::EMPTY;
        self.vertices.iter().for_each(|p| b.grow(*p));
        b
    }
}
