//! Articulated capsule proxy body: skeleton and poses, the skinned mesh with
//! its UV atlas, and the mapping between world points, surface coordinates
//! `(u, v, h)` and canonical rest-pose coordinates.

mod bvh;
mod mesh;
mod posed;
mod skeleton;

pub use bvh::{closest_point_triangle, ray_triangle, Bvh, NearestHit, RayHit};
pub use mesh::{Chart, ProxyMesh};
pub use posed::{pose_mesh, LocalCoords, PosedBody, SurfaceFrame};
pub use skeleton::{capsule_sdf, cosine_blend, BodyConfig, BoneSpec, Pose};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cos, sin, Mat3, Vec3, PI};
    use crate::rng;
    use alloc::sync::Arc;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn human() -> Arc<ProxyMesh> {
        Arc::new(ProxyMesh::build(&BodyConfig::human()).unwrap())
    }

    /// A vertex in the middle ring of `bone`'s chart, off the seam.
    fn mid_vertex(m: &ProxyMesh, bone: usize, col: usize) -> usize {
        let ch = &m.charts[bone];
        ch.first_vertex + ch.segments + (ch.rows / 2 - 1) * (ch.segments + 1) + col
    }

    fn rodrigues(axis: Vec3, angle: f64, v: Vec3) -> Vec3 {
        let k = axis.normalized();
        v * cos(angle) + k.cross(v) * sin(angle) + k * (k.dot(v) * (1.0 - cos(angle)))
    }

    #[test]
    fn human_has_sixteen_joints_and_valid_weights() {
        let m = human();
        assert_eq!(m.joint_count(), 16);
        for v in 0..m.vertices.len() {
            let row = m.weight_row(v);
            assert!(row.iter().all(|w| *w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(m.uvs.iter().all(|uv| (0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1])));
        // feet rest on the ground
        let zmin = m.vertices.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!(zmin >= 0.0 && zmin < 0.01, "{zmin}");
    }

    #[test]
    fn charts_are_disjoint_with_gutters() {
        let m = human();
        let g = 2.0 / 1024.0;
        for (i, a) in m.charts.iter().enumerate() {
            assert!(a.rect[0] >= g && a.rect[1] >= g && a.rect[2] <= 1.0 - g && a.rect[3] <= 1.0 - g);
            for b in &m.charts[i + 1..] {
                let sep = (b.rect[0] - a.rect[2]).max(a.rect[0] - b.rect[2]).max(b.rect[1] - a.rect[3]).max(a.rect[1] - b.rect[3]);
                assert!(sep >= g, "charts {} and {} overlap", a.bone, b.bone);
            }
        }
    }

    #[test]
    fn each_capsule_is_watertight() {
        let m = human();
        for ch in &m.charts {
            // every edge (by representative vertex) is shared by exactly two faces
            let mut edges: Vec<(u32, u32)> = Vec::new();
            for f in ch.first_face..ch.first_face + ch.face_count() {
                let t = m.faces[f].map(|i| m.rep[i as usize]);
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    if a != b {
                        edges.push((a.min(b), a.max(b)));
                    }
                }
            }
            edges.sort_unstable();
            let mut i = 0;
            while i < edges.len() {
                let mut j = i;
                while j < edges.len() && edges[j] == edges[i] {
                    j += 1;
                }
                assert_eq!(j - i, 2, "chart {} edge {:?}", ch.bone, edges[i]);
                i = j;
            }
        }
    }

    #[test]
    fn identity_pose_is_rest() {
        let m = human();
        let p = pose_mesh(&m, &Pose::identity(16)).unwrap();
        for (a, b) in p.iter().zip(&m.vertices) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }

    #[test]
    fn translation_shifts_everything() {
        let m = human();
        let mut pose = Pose::identity(16);
        pose.global_translation = Vec3::new(0.3, -1.0, 0.25);
        let p = pose_mesh(&m, &pose).unwrap();
        for (a, b) in p.iter().zip(&m.vertices) {
            assert!((*a - (*b + pose.global_translation)).norm() < 1e-12);
        }
    }

    #[test]
    fn bad_global_rotation_rejected() {
        let m = human();
        let mut pose = Pose::identity(16);
        pose.global_rotation = Mat3::IDENTITY.scale(1.01);
        assert!(pose_mesh(&m, &pose).is_err());
    }

    #[test]
    fn elbow_rotation_is_rigid_about_the_joint() {
        let m = human();
        let elbow = 6;
        let axis = Vec3::new(0.0, 1.0, 0.0);
        let mut pose = Pose::identity(16);
        pose.joint_rotations[elbow] = axis * (PI / 2.0);
        let p = pose_mesh(&m, &pose).unwrap();
        let j = m.config.bones[elbow].joint;
        let mut checked = 0;
        for v in 0..m.vertices.len() {
            let row = m.weight_row(v);
            if row[elbow] == 1.0 {
                let want = j + rodrigues(axis, PI / 2.0, m.vertices[v] - j);
                assert!((p[v] - want).norm() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn vertex_projects_to_itself_and_offsets_along_normal() {
        let body = PosedBody::rest(human()).unwrap();
        for (bone, col) in [(10, 3), (2, 5), (0, 7), (12, 2)] {
            let v = mid_vertex(&body.mesh, bone, col);
            let uv = body.mesh.uvs[v];
            let lc = body.project_to_surface(body.vertices[v]).unwrap();
            assert!(lc.h.abs() < 1e-12);
            assert!((lc.u - uv[0]).abs() < 1e-12 && (lc.v - uv[1]).abs() < 1e-12);
            let x = body.vertices[v] + body.normals[v] * 0.02;
            let lc = body.project_to_surface(x).unwrap();
            assert!((lc.h - 0.02).abs() < 1e-4, "bone {bone}: h = {}", lc.h);
            assert!((lc.u - uv[0]).abs() < 1e-9 && (lc.v - uv[1]).abs() < 1e-9);
        }
    }

    fn posed_human() -> PosedBody {
        let mut pose = Pose::identity(16);
        pose.joint_rotations[4] = Vec3::new(0.0, 0.4, 0.3);
        pose.joint_rotations[6] = Vec3::new(0.0, 1.2, 0.0);
        pose.joint_rotations[10] = Vec3::new(-0.5, 0.0, 0.0);
        pose.joint_rotations[12] = Vec3::new(0.7, 0.0, 0.0);
        pose.global_rotation = Mat3::from_axis_angle(Vec3::new(0.0, 0.0, 0.6));
        pose.global_translation = Vec3::new(0.1, 0.2, 0.0);
        PosedBody::new(human(), &pose).unwrap()
    }

    fn shell_point(body: &PosedBody, r: &mut rng::StreamRng) -> Vec3 {
        let v = (rng::uniform(r) * body.vertices.len() as f64) as usize % body.vertices.len();
        let off = (rng::uniform(r) * 2.0 - 1.0) * 0.07;
        let jitter = Vec3::new(rng::normal(r), rng::normal(r), rng::normal(r)) * 0.01;
        body.vertices[v] + body.normals[v] * off + jitter
    }

    #[test]
    fn bvh_matches_exhaustive_search() {
        let body = posed_human();
        let mut r = rng::stream(11, 0);
        for _ in 0..1000 {
            let x = shell_point(&body, &mut r);
            let a = body.nearest(x, 1.0).unwrap();
            let b = body.nearest_brute(x);
            assert_eq!(a.face, b.face);
            assert_eq!(a.dist_sq, b.dist_sq);
        }
    }

    #[test]
    fn buried_faces_are_skipped() {
        let body = posed_human();
        let m = &body.mesh;
        let buried = m.buried.iter().filter(|b| **b).count();
        assert!(buried > 0 && buried < m.faces.len() / 2, "{buried} of {}", m.faces.len());
        let sphere = ProxyMesh::build(&BodyConfig::sphere(Vec3::ZERO, 0.3)).unwrap();
        assert!(sphere.buried.iter().all(|b| !b));
        let mut r = rng::stream(13, 0);
        for _ in 0..500 {
            let x = shell_point(&body, &mut r);
            if let Some(lc) = body.project_to_surface(x) {
                assert!(!m.buried[body.nearest(x, 1.0).unwrap().face]);
                assert!(lc.h.is_finite());
            }
        }
        let n = body.texel_normals(64);
        let bind = m.texel_bindings(64);
        for (k, b) in bind.iter().enumerate() {
            assert_eq!(n[k].is_some(), b.is_some_and(|(f, _)| !m.buried[f]));
        }
    }

    #[test]
    fn uv_roundtrip_and_frames() {
        let body = posed_human();
        let m = &body.mesh;
        let mut r = rng::stream(12, 0);
        let mut n = 0;
        while n < 300 {
            let ch = &m.charts[(rng::uniform(&mut r) * 16.0) as usize % 16];
            // stay off the pole fans, where the chart corners fold onto the fan
            let a = 0.02 + 0.96 * rng::uniform(&mut r);
            let b = (1.0 + (ch.rows - 2) as f64 * rng::uniform(&mut r)) / ch.rows as f64;
            let u = ch.rect[0] + a * (ch.rect[2] - ch.rect[0]);
            let v = ch.rect[1] + b * (ch.rect[3] - ch.rect[1]);
            let f = body.uv_to_surface(u, v).unwrap();
            if m.buried[f.face] {
                continue;
            }
            let e = [f.tangent, f.bitangent, f.normal];
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((e[i].dot(e[j]) - want).abs() < 1e-6);
                }
            }
            let lc = body.project_to_surface(f.point).unwrap();
            assert!(lc.h.abs() < 1e-5);
            assert!((lc.u - u).abs() < 1e-4 && (lc.v - v).abs() < 1e-4, "({u},{v}) -> ({},{})", lc.u, lc.v);
            n += 1;
        }
        assert!(body.uv_to_surface(0.001, 0.001).is_err());
    }

    #[test]
    fn canonical_unwarp_inverts_rigid_regions() {
        let rest = PosedBody::rest(human()).unwrap();
        let body = posed_human();
        let m = &body.mesh;
        // identity pose: normalization only
        let x = rest.vertices[mid_vertex(m, 1, 4)] + Vec3::new(0.0, -0.03, 0.0);
        let c = rest.canonical_unwarp(x).unwrap();
        assert!((c - m.normalize_canonical(x)).norm() < 1e-12);
        let mut r = rng::stream(13, 0);
        let mut checked = 0;
        for v in 0..m.vertices.len() {
            let row = m.weight_row(v);
            let Some(j) = row.iter().position(|w| *w == 1.0) else { continue };
            if body.nearest(body.vertices[v], 1e-9).is_none() {
                continue; // only on buried faces
            }
            let c = body.canonical_unwarp(body.vertices[v]).unwrap();
            assert!((c - m.normalize_canonical(m.vertices[v])).norm() < 1e-5);
            // shell point off this vertex, pushed forward by the rigid bone transform
            let xc = m.vertices[v] + m.rest_normals[v] * (0.05 * rng::uniform(&mut r));
            let xw = body.bones[j].apply(xc);
            let lc = body.project_to_surface(xw).unwrap();
            let weights_one = m.faces[lc.face].iter().all(|&i| m.weight_row(i as usize)[j] == 1.0);
            if weights_one {
                let back = body.canonical_unwarp(xw).unwrap();
                assert!((back - m.normalize_canonical(xc)).norm() < 1e-4);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn canonical_points_stay_in_unit_box() {
        let body = posed_human();
        let mut r = rng::stream(14, 0);
        for _ in 0..500 {
            let x = shell_point(&body, &mut r);
            if let Ok(c) = body.canonical_unwarp(x) {
                assert!(c.x.abs() <= 1.0 + 1e-9 && c.y.abs() <= 1.0 + 1e-9 && c.z.abs() <= 1.0 + 1e-9, "{c:?}");
            }
        }
    }

    #[test]
    fn off_body_points_are_flagged() {
        let body = PosedBody::rest(human()).unwrap();
        assert!(body.project_to_surface(Vec3::new(0.0, -1.0, 1.0)).is_none());
    }

    #[test]
    fn sphere_body_vertices_lie_on_the_sphere() {
        let c = Vec3::new(0.0, 0.0, 0.5);
        let m = ProxyMesh::build(&BodyConfig::sphere(c, 0.3)).unwrap();
        assert!(m.vertices.iter().all(|p| ((*p - c).norm() - 0.3).abs() < 1e-12));
        let body = PosedBody::rest(Arc::new(m)).unwrap();
        for (v, n) in body.vertices.iter().zip(&body.normals) {
            assert!((*v - c).normalized().dot(*n) > 0.99);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn signed_distance_flips_across_surface(seed in 0u64..10_000, eps in 1e-4f64..0.02) {
            let body = posed_human();
            let mut r = rng::stream(seed, 5);
            let f = (rng::uniform(&mut r) * body.mesh.faces.len() as f64) as usize % body.mesh.faces.len();
            let a = rng::uniform(&mut r);
            let b = rng::uniform(&mut r) * (1.0 - a);
            let fr = body.frame_at(f, [1.0 - a - b, a, b]);
            let out = body.project_to_surface(fr.point + fr.normal * eps);
            let inn = body.project_to_surface(fr.point - fr.normal * eps);
            // skip points where another capsule's surface is nearer
            if let (Some(o), Some(i)) = (out, inn) {
                if o.face == f && i.face == f {
                    prop_assert!(o.h > 0.0 && i.h < 0.0);
                }
            }
        }

        #[test]
        fn reprojection_is_idempotent(seed in 0u64..10_000) {
            let body = posed_human();
            let mut r = rng::stream(seed, 6);
            let x = shell_point(&body, &mut r);
            if let Some(lc) = body.project_to_surface(x) {
                let again = body.project_to_surface(lc.surface).unwrap();
                prop_assert!((again.u - lc.u).abs() < 1e-6 && (again.v - lc.v).abs() < 1e-6);
            }
        }
    }
}
