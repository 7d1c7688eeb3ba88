use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::body::{BodyConfig, PosedBody, ProxyMesh};
use crate::density::{render_camera_refined, AnalyticField, DepthRefine, DensityField, Shell};
use crate::envlight::texel_geometry;
use crate::math::{acos, Vec3};
use crate::rng;

struct Empty;

impl DensityQuery for Empty {
    fn sigma(&self, _: Vec3) -> f64 {
        0.0
    }
}

fn angle_deg(a: Vec3, b: Vec3) -> f64 {
    acos(a.normalized().dot(b.normalized()).clamp(-1.0, 1.0)).to_degrees()
}

#[test]
fn fronto_parallel_plane_normals() {
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, -1.0, 0.0), 0.8, 32, 24).unwrap();
    let f = cam.forward();
    let depth: Vec<Option<f64>> = (0..32 * 24)
        .map(|i| {
            let (_, d) = cam.pixel_ray(i % 32, i / 32);
            Some(2.0 / d.dot(f))
        })
        .collect();
    let n = normals_from_depth(&depth, &cam).unwrap();
    let mut interior = 0;
    for (i, n) in n.iter().enumerate() {
        let (x, y) = (i % 32, i / 32);
        if x == 0 || y == 0 || x == 31 || y == 23 {
            assert!(n.is_none());
        } else {
            interior += 1;
            assert!((n.unwrap() + f).norm() < 1e-4);
        }
    }
    assert_eq!(interior, 30 * 22);
}

#[test]
fn isolated_and_empty_depth() {
    let cam = Camera::look_at(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, -1.0, 0.0), 0.8, 8, 8).unwrap();
    let mut depth = vec![None; 64];
    assert!(normals_from_depth(&depth, &cam).unwrap().iter().all(Option::is_none));
    depth[3 * 8 + 3] = Some(1.0);
    assert!(normals_from_depth(&depth, &cam).unwrap().iter().all(Option::is_none));
    // a plus-shaped neighbourhood is the minimum that survives
    for k in [2 * 8 + 3, 4 * 8 + 3, 3 * 8 + 2, 3 * 8 + 4] {
        depth[k] = Some(1.0);
    }
    let n = normals_from_depth(&depth, &cam).unwrap();
    assert_eq!(n.iter().filter(|v| v.is_some()).count(), 1);
    assert!(normals_from_depth(&depth[1..], &cam).is_err());
}

/// Ray–sphere first hit distance.
fn hit_sphere(o: Vec3, d: Vec3, c: Vec3, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_sq() - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

#[test]
fn rendered_sphere_normals_within_two_degrees() {
    // central differences have a first-order chord error at oblique pixels,
    // so the sphere spans most of a 384² frame
    let c = Vec3::new(0.1, -0.05, 1.0);
    let r = 0.3;
    let res = 384;
    // a soft logistic tail pulls the expected depth toward the camera by
    // about ln2/(s·cosθ), so the surface is sharp and resolved by a second
    // pass around the first estimate
    let field = AnalyticField::sphere(c, r, 4000.0, [1.0; 3]).unwrap();
    let cam = Camera::look_at(Vec3::new(0.2, -1.6, 1.3), c, Vec3::new(0.0, 0.0, 1.0), 0.45, res, res).unwrap();
    let bounds = crate::math::Aabb { min: c - Vec3::splat(0.4), max: c + Vec3::splat(0.4) };
    let refine = DepthRefine { half_width: 0.01, samples: 128 };
    let view = render_camera_refined(&field, &cam, bounds, 256, Some(refine)).unwrap();
    let normals = normals_from_depth(&view.depth, &cam).unwrap();
    let (mut count, mut worst) = (0, 0.0f64);
    for (i, n) in normals.iter().enumerate() {
        let (o, d) = cam.pixel_ray(i % res, i / res);
        let Some(t) = hit_sphere(o, d, c, r) else { continue };
        let truth = (o + d * t - c).normalized();
        // keep pixels more than 10° from the silhouette
        if angle_deg(truth, -d) > 80.0 {
            continue;
        }
        let n = n.expect("interior pixel has a normal");
        worst = worst.max(angle_deg(n, truth));
        count += 1;
    }
    assert!(count > 20_000);
    assert!(worst < 2.0, "worst {worst}");
}

#[test]
fn empty_field_sees_the_front_hemisphere() {
    let env = texel_geometry(16, 32);
    let n = Vec3::new(0.3, -0.2, 0.9).normalized();
    let bound = crate::math::Aabb { min: Vec3::splat(-1.0), max: Vec3::splat(1.0) };
    let v = visibility_at_point(&Empty, Vec3::ZERO, n, &env.directions, &bound, MarchConfig::default());
    for (k, d) in env.directions.iter().enumerate() {
        assert_eq!(v[k], if d.dot(n) > 0.0 { 1.0 } else { 0.0 });
    }
}

/// Plane z = 0 with an analytic sphere floating above it.
fn plane_sphere_scene() -> (AnalyticField, Vec3, f64) {
    let c = Vec3::new(0.0, 0.0, 0.5);
    (AnalyticField::sphere(c, 0.25, 400.0, [1.0; 3]).unwrap(), c, 0.25)
}

fn oracle(x: Vec3, n: Vec3, dirs: &[Vec3], c: Vec3, r: f64) -> Vec<f32> {
    dirs.iter()
        .map(|&w| {
            if w.dot(n) <= 0.0 {
                0.0
            } else if hit_sphere(x, w, c, r).is_some() {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

#[test]
fn plane_sphere_visibility_matches_ray_oracle() {
    let env = texel_geometry(16, 32);
    let (field, c, r) = plane_sphere_scene();
    let bound = crate::math::Aabb { min: Vec3::new(-2.0, -2.0, -0.1), max: Vec3::new(2.0, 2.0, 1.5) };
    let n = Vec3::new(0.0, 0.0, 1.0);
    let mut rg = rng::stream(4, 0);
    let mut err = 0.0;
    let mut count = 0;
    let (mut far_low, mut far_total) = (0, 0);
    for _ in 0..100 {
        let x = Vec3::new(rng::uniform(&mut rg) * 1.2 - 0.6, rng::uniform(&mut rg) * 1.2 - 0.6, 0.0);
        let v = visibility_at_point(&field, x, n, &env.directions, &bound, MarchConfig::default());
        let o = oracle(x, n, &env.directions, c, r);
        for k in 0..v.len() {
            assert!((0.0..=1.0).contains(&v[k]));
            err += (v[k] - o[k]).abs() as f64;
            count += 1;
            if o[k] == 1.0 {
                far_total += 1;
                if v[k] < 0.99 {
                    far_low += 1;
                }
            }
        }
    }
    let mae = err / count as f64;
    assert!(mae < 0.02, "mae {mae}");
    // directions that clear the sphere stay essentially unoccluded
    assert!((far_low as f64) < 0.02 * far_total as f64, "{far_low}/{far_total}");
}

#[test]
fn halving_the_step_is_stable() {
    let env = texel_geometry(16, 32);
    let (field, _, _) = plane_sphere_scene();
    let bound = crate::math::Aabb { min: Vec3::new(-2.0, -2.0, -0.1), max: Vec3::new(2.0, 2.0, 1.5) };
    let n = Vec3::new(0.0, 0.0, 1.0);
    // a soft occluder so the quadrature actually matters
    let soft = AnalyticField::sphere(Vec3::new(0.0, 0.0, 0.5), 0.25, 30.0, [1.0; 3]).unwrap();
    for f in [&field, &soft] {
        for x in [Vec3::new(0.1, 0.0, 0.0), Vec3::new(-0.3, 0.2, 0.0)] {
            let a = visibility_at_point(f, x, n, &env.directions, &bound, MarchConfig { lift: 0.01, step: 0.01 });
            let b = visibility_at_point(f, x, n, &env.directions, &bound, MarchConfig { lift: 0.01, step: 0.005 });
            let worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
            assert!(worst < 0.01, "{worst}");
        }
    }
}

struct Sum<'a>(&'a AnalyticField, &'a AnalyticField);

impl DensityQuery for Sum<'_> {
    fn sigma(&self, x: Vec3) -> f64 {
        self.0.sigma_at(x) + self.1.sigma_at(x)
    }
}

#[test]
fn adding_density_never_raises_visibility() {
    let env = texel_geometry(16, 32);
    let (a, _, _) = plane_sphere_scene();
    let b = AnalyticField::sphere(Vec3::new(0.4, 0.3, 0.3), 0.15, 60.0, [1.0; 3]).unwrap();
    let bound = crate::math::Aabb { min: Vec3::splat(-2.0), max: Vec3::splat(2.0) };
    let n = Vec3::new(0.0, 0.0, 1.0);
    let x = Vec3::new(0.1, 0.1, 0.0);
    let one = visibility_at_point(&a, x, n, &env.directions, &bound, MarchConfig::default());
    let both = visibility_at_point(&Sum(&a, &b), x, n, &env.directions, &bound, MarchConfig::default());
    assert!(one.iter().zip(&both).all(|(p, q)| q <= p));
    assert!(one.iter().zip(&both).any(|(p, q)| q < p));
}

#[test]
fn splat_examples() {
    let mut m = SparseUVMap::new(4, 4, 1).unwrap();
    let (a, b, c) = ([0.1, 0.1], [0.6, 0.1], [0.9, 0.9]);
    m.splat_ray(&[(a, 0.1, &[1.0]), (b, 0.7, &[2.0]), (c, 0.2, &[3.0])], 0, 0).unwrap();
    let kb = m.texel_of(b[0], b[1]).unwrap();
    assert_eq!(m.valid_count(), 1);
    assert_eq!(m.texel(kb), &[2.0]);
    // running max: a heavier later ray replaces, a lighter one does not
    m.splat_ray(&[(b, 0.3, &[5.0])], 0, 1).unwrap();
    assert_eq!(m.texel(kb), &[2.0]);
    m.splat_ray(&[(b, 0.9, &[6.0])], 1, 0).unwrap();
    assert_eq!(m.texel(kb), &[6.0]);
    // out-of-square samples are skipped
    m.splat_ray(&[([1.5, 0.2], 1.0, &[9.0]), ([0.1, 0.9], 0.2, &[7.0])], 2, 0).unwrap();
    assert_eq!(m.texel(m.texel_of(0.1, 0.9).unwrap()), &[7.0]);
    assert!(m.splat_ray(&[(a, 0.5, &[1.0, 2.0])], 0, 0).is_err());
    // invalid texels keep zero best weight
    for k in 0..16 {
        assert_eq!(m.best_weight[k] == 0.0, !m.valid[k]);
    }
}

#[test]
fn equal_weights_go_to_lower_camera() {
    let mut m = SparseUVMap::new(2, 2, 1).unwrap();
    m.splat_ray(&[([0.2, 0.2], 0.5, &[2.0])], 3, 0).unwrap();
    m.splat_ray(&[([0.2, 0.2], 0.5, &[1.0])], 1, 9).unwrap();
    m.splat_ray(&[([0.2, 0.2], 0.5, &[3.0])], 2, 0).unwrap();
    assert_eq!(m.texel(0), &[1.0]);
    assert_eq!(m.source[0], (1, 9));
}

type Record = (u32, u32, [f64; 2], f64, f32);

/// Global argmax per texel over all records.
fn brute_force(records: &[Record], n: usize) -> SparseUVMap {
    let mut out = SparseUVMap::new(n, n, 1).unwrap();
    for k in 0..n * n {
        let mut best: Option<&Record> = None;
        for r in records {
            if out.texel_of(r.2[0], r.2[1]) != Some(k) || !(r.3 as f32 > 0.0) {
                continue;
            }
            let key = |r: &Record| SplatKey { weight: r.3 as f32 as f64, camera: r.0, ray: r.1 };
            if best.is_none_or(|b| key(r).beats(&key(b))) {
                best = Some(r);
            }
        }
        if let Some(b) = best {
            out.values[k] = b.4;
            out.valid[k] = true;
            out.best_weight[k] = b.3 as f32;
            out.source[k] = (b.0, b.1);
        }
    }
    out
}

proptest! {
    #[test]
    fn splat_is_order_invariant_and_matches_argmax(seed in 0u64..1000) {
        let mut r = rng::stream(seed, 0);
        let mut recs: Vec<Record> = Vec::new();
        for cam in 0..4u32 {
            for ray in 0..60u32 {
                let uv = [rng::uniform(&mut r), rng::uniform(&mut r)];
                // coarse weights force ties
                let w = (rng::uniform(&mut r) * 8.0).floor() / 8.0;
                recs.push((cam, ray, uv, w, rng::uniform(&mut r) as f32));
            }
        }
        let oracle = brute_force(&recs, 8);
        let perm = rng::permutation(&mut r, recs.len());
        let mut a = SparseUVMap::new(8, 8, 1).unwrap();
        let mut b = SparseUVMap::new(8, 8, 1).unwrap();
        for rec in &recs {
            a.splat_ray(&[(rec.2, rec.3, &[rec.4])], rec.0, rec.1).unwrap();
        }
        for &i in &perm {
            let rec = &recs[i];
            b.splat_ray(&[(rec.2, rec.3, &[rec.4])], rec.0, rec.1).unwrap();
        }
        prop_assert_eq!(&a, &oracle);
        prop_assert_eq!(&b, &oracle);
    }
}

fn sphere_shell(c: Vec3, r: f64) -> Shell {
    let mesh = Arc::new(ProxyMesh::build(&BodyConfig::sphere(c, r)).unwrap());
    Shell::new(Arc::new(PosedBody::rest(mesh).unwrap()))
}

fn ring(c: Vec3, n: usize, res: usize) -> Vec<Camera> {
    (0..n)
        .map(|k| {
            let a = k as f64 * core::f64::consts::TAU / n as f64;
            let z = if k % 5 == 0 { 0.9 } else if k % 5 == 1 { -0.9 } else { 0.1 * (k % 3) as f64 };
            let eye = c + Vec3::new(1.5 * libm::cos(a), 1.5 * libm::sin(a), z);
            Camera::look_at(eye, c, Vec3::new(0.0, 0.0, 1.0), 0.6, res, res).unwrap()
        })
        .collect()
}

#[test]
fn sphere_bake_normals_agree_with_surface() {
    let c = Vec3::new(0.0, 0.0, 1.0);
    let shell = sphere_shell(c, 0.3);
    // sharp enough that the tail in front of the surface is negligible
    let field = DensityField::Analytic(AnalyticField::sphere(c, 0.3, 4000.0, [1.0; 3]).unwrap());
    let env = texel_geometry(8, 16);
    // texels of a 128² map span about 1.5° of the sphere, so the texel-centre
    // comparison is not dominated by quantization
    let res = 128;
    let cfg = BakeConfig { normal_res: res, visibility_res: 32, ..Default::default() };
    let maps = bake_pose_maps(&field, &shell, &ring(c, 40, 64), &env, &cfg).unwrap();
    assert!(maps.normals.valid_count() > 2000);
    let mut worst = 0.0f64;
    for k in 0..res * res {
        if !maps.normals.valid[k] {
            continue;
        }
        let v = maps.normals.texel(k);
        let n = Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64);
        assert!((n.norm() - 1.0).abs() < 1e-4);
        let (u, vv) = (((k % res) as f64 + 0.5) / res as f64, ((k / res) as f64 + 0.5) / res as f64);
        let Ok(frame) = shell.body.uv_to_surface(u, vv) else { continue };
        let e = angle_deg(n, (frame.point - c).normalized());
        worst = worst.max(e);
    }
    assert!(worst < 5.0, "worst {worst}");
    assert!(maps.visibility.values.iter().all(|v| (0.0..=1.0).contains(v)));
    // a lone convex sphere sees its whole front hemisphere; grazing
    // directions skim the soft tail and are left out
    let mut checked = 0;
    for k in 0..32 * 32 {
        if !maps.visibility.valid[k] {
            continue;
        }
        let (u, vv) = (((k % 32) as f64 + 0.5) / 32.0, ((k / 32) as f64 + 0.5) / 32.0);
        let Ok(frame) = shell.body.uv_to_surface(u, vv) else { continue };
        let n = (frame.point - c).normalized();
        for (w, v) in env.directions.iter().zip(maps.visibility.texel(k)) {
            let cos = w.dot(n);
            if cos > 0.4 {
                assert!(*v > 0.99, "front {v} at cos {cos}");
            } else if cos < -0.4 {
                assert_eq!(*v, 0.0);
            }
        }
        checked += 1;
    }
    assert!(checked > 200, "{checked}");
}

#[test]
fn single_camera_covers_about_half() {
    let c = Vec3::new(0.0, 0.0, 1.0);
    let shell = sphere_shell(c, 0.3);
    let field = DensityField::Analytic(AnalyticField::sphere(c, 0.3, 400.0, [1.0; 3]).unwrap());
    let env = texel_geometry(4, 8);
    let cfg = BakeConfig { normal_res: 32, visibility_res: 8, ..Default::default() };
    let maps = bake_pose_maps(&field, &shell, &ring(c, 1, 64)[..1], &env, &cfg).unwrap();
    assert!(maps.normal_coverage > 0.2 && maps.normal_coverage < 0.6, "{}", maps.normal_coverage);
    let cam = ring(c, 1, 64)[0].center();
    for k in 0..32 * 32 {
        if maps.normals.valid[k] {
            let (u, v) = (((k % 32) as f64 + 0.5) / 32.0, ((k / 32) as f64 + 0.5) / 32.0);
            if let Ok(f) = shell.body.uv_to_surface(u, v) {
                // nothing on the far side gets written
                assert!((cam - f.point).dot(f.normal) > -0.05);
            }
        }
    }
    assert!(bake_pose_maps(&field, &shell, &[], &env, &cfg).is_err());
}

