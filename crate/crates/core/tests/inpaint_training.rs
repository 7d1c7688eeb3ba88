//! Trained inpainting nets against the region-growing baseline on held-out
//! bake masks of the proxy human.

use std::sync::Arc;

use rand::Rng;
use uvrelight_core::autodiff::TexelSupport;
use uvrelight_core::body::{BodyConfig, Pose, PosedBody, ProxyMesh};
use uvrelight_core::camera::Camera;
use uvrelight_core::envlight::texel_geometry;
use uvrelight_core::inpaint::*;
use uvrelight_core::math::Vec3;
use uvrelight_core::rng;

fn ring(n: usize) -> Vec<Camera> {
    let c = Vec3::new(0.0, 0.0, 0.9);
    (0..n)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / n as f64;
            let eye = c + Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.3 * (k % 3) as f64 - 0.2);
            Camera::look_at(eye, c, Vec3::new(0.0, 0.0, 1.0), 0.75, 96, 96).unwrap()
        })
        .collect()
}

fn random_pose(seed: u64) -> Pose {
    let mut p = Pose::identity(16);
    let mut r = rng::stream(seed, 3);
    for j in 4..16 {
        p.joint_rotations[j] = Vec3::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.4..0.4));
    }
    p
}

struct Frame {
    body: PosedBody,
}

fn frames(mesh: &Arc<ProxyMesh>, seeds: &[u64]) -> Vec<Frame> {
    seeds.iter().map(|s| Frame { body: PosedBody::new(mesh.clone(), &random_pose(*s)).unwrap() }).collect()
}

/// Masks of bakes from `k` random cameras of the ring.
fn bake_masks(body: &PosedBody, cams: &[Camera], res: usize, count: usize, k: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut r = rng::stream(seed, 11);
    (0..count)
        .map(|_| {
            let idx = rand::seq::index::sample(&mut r, cams.len(), k);
            let pick: Vec<Camera> = idx.iter().map(|i| cams[i].clone()).collect();
            visible_texels(body, &pick, res, 0.25)
        })
        .collect()
}

fn normal_map(body: &PosedBody, support: &TexelSupport, res: usize) -> DenseUVMap {
    let n = body.texel_normals(res);
    DenseUVMap::from_support(support, 3, |i, j| n[i * res + j].map(|v| v.to_f32().to_vec())).unwrap()
}

fn holes(target: &DenseUVMap, mask: &[bool]) -> Vec<bool> {
    (0..target.len()).map(|k| target.valid[k] && !mask[k]).collect()
}

#[test]
fn normal_net_beats_region_growing_on_held_out_masks() {
    let mesh = Arc::new(ProxyMesh::build(&BodyConfig::human()).unwrap());
    let res = 64;
    let support = mesh.texel_support(res);
    let cams = ring(12);
    let mut samples = Vec::new();
    for (fi, f) in frames(&mesh, &[1, 2, 3, 4]).iter().enumerate() {
        let target = normal_map(&f.body, &support, res);
        for m in bake_masks(&f.body, &cams, res, 3, 2, 100 + fi as u64) {
            samples.push(InpaintSample { target: target.clone(), input_mask: m, normals: None });
        }
    }
    let data = InpaintDataset { support: support.clone(), directions: Vec::new(), samples };
    let mut net = TrainedInpainter::new(InpaintNetConfig::normal_net(12), 7).unwrap();
    let cfg = InpaintTrainConfig { epochs: 40, seed: 7, ..Default::default() };
    let log = train_inpainter(&mut net, &data, &cfg, |_, _| {}).unwrap();
    eprintln!("normal net epoch losses {:?}", log.epoch_losses);

    let (mut err_net, mut err_morph) = (0.0, 0.0);
    let held = frames(&mesh, &[99]);
    let target = normal_map(&held[0].body, &support, res);
    for m in bake_masks(&held[0].body, &cams, res, 3, 2, 999) {
        let sparse = target.masked(&m).unwrap();
        let hole = holes(&target, &m);
        let out = inpaint_forward(&net, InpaintInputs::Normals { sparse: &sparse }, &support).unwrap();
        let base = morph_inpaint(&sparse, &support, 1 << 20, true).unwrap().map;
        err_net += masked_angular_error(&out, &target, &hole).unwrap();
        err_morph += masked_angular_error(&base, &target, &hole).unwrap();
    }
    eprintln!("held-out masked angular error: net {err_net:.3}, region growing {err_morph:.3} (sum of 3)");
    assert!(err_net < err_morph);
}

#[test]
fn visibility_net_beats_region_growing_on_held_out_masks() {
    let mesh = Arc::new(ProxyMesh::build(&BodyConfig::human()).unwrap());
    let res = 32;
    let support = mesh.texel_support(res);
    let env = texel_geometry(8, 16);
    let dirs = env.directions.clone();
    let cams = ring(12);
    let vis_map = |b: &PosedBody| {
        let v = b.texel_visibility(res, &dirs, 2e-3);
        DenseUVMap::from_support(&support, dirs.len(), |i, j| v[i * res + j].clone()).unwrap()
    };
    let mut samples = Vec::new();
    for (fi, f) in frames(&mesh, &[1, 2, 3, 4]).iter().enumerate() {
        let target = vis_map(&f.body);
        let normals = normal_map(&f.body, &support, res);
        for m in bake_masks(&f.body, &cams, res, 3, 2, 200 + fi as u64) {
            samples.push(InpaintSample { target: target.clone(), input_mask: m, normals: Some(normals.clone()) });
        }
    }
    let data = InpaintDataset { support: support.clone(), directions: dirs.clone(), samples };
    let mut net = TrainedInpainter::new(InpaintNetConfig::visibility_net(8), 8).unwrap();
    let cfg = InpaintTrainConfig { epochs: 10, seed: 8, direction_subset: 16, ..Default::default() };
    let log = train_inpainter(&mut net, &data, &cfg, |_, _| {}).unwrap();
    eprintln!("visibility net epoch losses {:?}", log.epoch_losses);

    let held = frames(&mesh, &[99]);
    let target = vis_map(&held[0].body);
    let normals = normal_map(&held[0].body, &support, res);
    let (mut err_net, mut err_morph) = (0.0, 0.0);
    for m in bake_masks(&held[0].body, &cams, res, 3, 2, 998) {
        let sparse = target.masked(&m).unwrap();
        let hole = holes(&target, &m);
        let inputs = InpaintInputs::Visibility { sparse: &sparse, normals: &normals, directions: &dirs };
        let out = inpaint_forward(&net, inputs, &support).unwrap();
        assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let base = morph_inpaint(&sparse, &support, 1 << 20, false).unwrap().map;
        err_net += masked_l1(&out, &target, &hole).unwrap();
        err_morph += masked_l1(&base, &target, &hole).unwrap();
    }
    eprintln!("held-out masked visibility L1: net {err_net:.4}, region growing {err_morph:.4} (sum of 3)");
    assert!(err_net < err_morph);
}
