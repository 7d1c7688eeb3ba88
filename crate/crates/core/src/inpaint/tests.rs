use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::net::{mask_of, to_nchw};
use super::train::{prepare, sample_loss};
use super::*;
use crate::autodiff::gradcheck::{check_grad_at, random_tensor, smooth_point};
use crate::autodiff::{Graph, Tensor};
use crate::rng;

fn one_chart(h: usize, w: usize) -> TexelSupport {
    TexelSupport::new(h, w, vec![1; h * w]).unwrap()
}

/// Two charts side by side with a one-column gutter between them.
fn two_charts(n: usize) -> TexelSupport {
    let labels = (0..n * n)
        .map(|k| match k % n {
            c if c < n / 2 => 1,
            c if c == n / 2 => 0,
            _ => 2,
        })
        .collect();
    TexelSupport::new(n, n, labels).unwrap()
}

fn smooth_normals(support: &TexelSupport, phase: f64) -> DenseUVMap {
    let (h, w) = (support.height, support.width);
    DenseUVMap::from_support(support, 3, |i, j| {
        let (u, v) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
        let n = Vec3::new(libm::sin(3.0 * u + phase), libm::cos(2.5 * v - phase), 1.2).normalized();
        Some(n.to_f32().to_vec())
    })
    .unwrap()
}

fn random_mask(n: usize, keep: f64, seed: u64) -> Vec<bool> {
    let mut r = rng::stream(seed, 7);
    (0..n).map(|_| rng::uniform(&mut r) < keep).collect()
}

#[test]
fn dense_input_is_a_fixpoint() {
    let s = one_chart(8, 8);
    let m = smooth_normals(&s, 0.0);
    let out = morph_inpaint(&m, &s, 100, true).unwrap();
    assert_eq!(out.map, m);
    assert_eq!(out.rounds, 0);
    assert!(out.empty_charts.is_empty());
}

#[test]
fn single_texel_floods_its_chart_only() {
    let s = two_charts(9);
    let mut m = DenseUVMap::new(9, 9, 2).unwrap();
    m.valid[2 * 9 + 1] = true;
    m.values[(2 * 9 + 1) * 2..(2 * 9 + 1) * 2 + 2].copy_from_slice(&[0.25, -3.0]);
    let out = morph_inpaint(&m, &s, 1000, false).unwrap();
    for k in 0..81 {
        match s.labels[k] {
            1 => {
                assert!(out.map.valid[k]);
                assert_eq!(out.map.texel(k), &[0.25, -3.0]);
            }
            _ => assert!(!out.map.valid[k], "texel {k} of chart {}", s.labels[k]),
        }
    }
    assert_eq!(out.empty_charts, vec![2]);
}

#[test]
fn checkerboard_gradient_is_recovered() {
    let s = one_chart(16, 16);
    let truth = DenseUVMap::from_support(&s, 1, |i, j| Some(vec![1.0 + 0.1 * j as f32 + 0.05 * i as f32])).unwrap();
    let keep: Vec<bool> = (0..256).map(|k| (k / 16 + k % 16) % 2 == 0).collect();
    let out = morph_inpaint(&truth.masked(&keep).unwrap(), &s, 10, false).unwrap();
    for k in 0..256 {
        let (a, b) = (out.map.values[k], truth.values[k]);
        assert!((a - b).abs() <= 0.1 * b.abs(), "texel {k}: {a} vs {b}");
    }
}

#[test]
fn morph_is_deterministic_and_idempotent() {
    let s = two_charts(12);
    let m = smooth_normals(&s, 0.4).masked(&random_mask(144, 0.2, 3)).unwrap();
    let a = morph_inpaint(&m, &s, 1000, true).unwrap();
    let b = morph_inpaint(&m, &s, 1000, true).unwrap();
    assert_eq!(a, b);
    let again = morph_inpaint(&a.map, &s, 1000, true).unwrap();
    assert_eq!(again.map, a.map);
    for k in 0..144 {
        if a.map.valid[k] && !m.valid[k] {
            let t = a.map.texel(k);
            let len = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn iteration_cap_limits_growth() {
    let s = one_chart(1, 10);
    let mut m = DenseUVMap::new(1, 10, 1).unwrap();
    m.valid[0] = true;
    m.values[0] = 1.0;
    let out = morph_inpaint(&m, &s, 3, false).unwrap();
    assert_eq!(out.map.valid_count(), 4);
    assert_eq!(out.rounds, 3);
}

#[test]
fn shape_mismatch_is_rejected() {
    let m = DenseUVMap::new(4, 4, 3).unwrap();
    assert!(morph_inpaint(&m, &one_chart(4, 5), 1, false).is_err());
    let net = TrainedInpainter::new(InpaintNetConfig::normal_net(4), 1).unwrap();
    let two = DenseUVMap::new(4, 4, 2).unwrap();
    assert!(inpaint_forward(&net, InpaintInputs::Normals { sparse: &two }, &one_chart(4, 4)).is_err());
    let vis = DenseUVMap::new(4, 4, 3).unwrap();
    let dirs = [Vec3::new(0.0, 0.0, 1.0); 3];
    let wrong = InpaintInputs::Visibility { sparse: &vis, normals: &m, directions: &dirs };
    assert!(inpaint_forward(&net, wrong, &one_chart(4, 4)).is_err());
}

#[test]
fn config_validation_and_round_trip() {
    let mut c = InpaintNetConfig::visibility_net(4);
    assert!(c.validate().is_ok());
    assert_eq!(c.size_multiple(), 2);
    c.upsample_after[5] = false;
    assert!(c.validate().is_err());
    let mut c = InpaintNetConfig::normal_net(4);
    c.widths[7] = 2;
    assert!(c.validate().is_err());
    let net = TrainedInpainter::new(InpaintNetConfig::visibility_net(4), 9).unwrap();
    let back = TrainedInpainter::from_params(net.params.clone()).unwrap();
    assert_eq!(back.config, net.config);
    let mut broken = net.params.clone();
    let id = broken.find("inpaint.meta").unwrap();
    broken.get_mut(id).data_mut()[0] = 7.0;
    assert!(TrainedInpainter::from_params(broken).is_err());
}

#[test]
fn fresh_net_returns_the_baseline() {
    let s = two_charts(8);
    let truth = smooth_normals(&s, 0.2);
    let sparse = truth.masked(&random_mask(64, 0.3, 5)).unwrap();
    let net = TrainedInpainter::new(InpaintNetConfig::normal_net(4), 2).unwrap();
    let out = inpaint_forward(&net, InpaintInputs::Normals { sparse: &sparse }, &s).unwrap();
    let base = morph_inpaint(&sparse, &s, 1 << 20, true).unwrap().map;
    assert_eq!(out.valid, base.valid);
    for (a, b) in out.values.iter().zip(&base.values) {
        assert!((a - b).abs() < 1e-6);
    }
    // all-valid input, every texel valid out
    let full = DenseUVMap { valid: vec![true; 64], ..truth.clone() };
    let out = inpaint_forward(&net, InpaintInputs::Normals { sparse: &full }, &s).unwrap();
    assert!(out.valid.iter().all(|v| *v));
}

fn randomize(net: &mut TrainedInpainter, seed: u64, scale: f32) {
    let ids: Vec<_> = net.params.iter().filter(|(_, n, _)| *n != "inpaint.meta").map(|(id, _, t)| (id, t.shape().to_vec())).collect();
    for (i, (id, shape)) in ids.into_iter().enumerate() {
        let fan: usize = shape.iter().skip(1).product::<usize>().max(1);
        let t = random_tensor(&shape, seed + i as u64);
        let s = scale / libm::sqrtf(fan as f32);
        let p = net.params.get_mut(id);
        for (d, v) in p.data_mut().iter_mut().zip(t.data()) {
            *d = v * s;
        }
    }
}

fn vis_fixture(n: usize, dirs: usize, seed: u64) -> (TexelSupport, Vec<Vec3>, InpaintSample) {
    let s = two_charts(n);
    let normals = smooth_normals(&s, 0.3);
    let mut r = rng::stream(seed, 1);
    let directions: Vec<Vec3> = (0..dirs)
        .map(|_| Vec3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)).normalized())
        .collect();
    let target = DenseUVMap::from_support(&s, dirs, |i, j| {
        let k = i * n + j;
        let nn = Vec3::new(normals.values[3 * k] as f64, normals.values[3 * k + 1] as f64, normals.values[3 * k + 2] as f64);
        Some(directions.iter().map(|d| (d.dot(nn).max(0.0) * 0.9) as f32).collect())
    })
    .unwrap();
    let input_mask = random_mask(n * n, 0.35, seed);
    (s, directions, InpaintSample { target, input_mask, normals: Some(normals) })
}

#[test]
fn visibility_outputs_lie_in_unit_interval() {
    let (s, dirs, sample) = vis_fixture(8, 5, 11);
    let mut net = TrainedInpainter::new(InpaintNetConfig::visibility_net(4), 3).unwrap();
    randomize(&mut net, 40, 6.0);
    let sparse = sample.target.masked(&sample.input_mask).unwrap();
    let normals = sample.normals.as_ref().unwrap();
    let out = inpaint_forward(&net, InpaintInputs::Visibility { sparse: &sparse, normals, directions: &dirs }, &s).unwrap();
    assert!(out.valid_count() > 0);
    assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn normal_net_loss_gradients_match_finite_differences() {
    let s = two_charts(8);
    let truth = smooth_normals(&s, 0.1);
    let net = TrainedInpainter::new(InpaintNetConfig::normal_net(3), 4).unwrap();
    let data = InpaintDataset { support: s, directions: Vec::new(), samples: Vec::new() };
    let sample = InpaintSample { target: truth, input_mask: random_mask(64, 0.4, 8), normals: None };
    let p = prepare(&net, &data, &sample, 0.1).unwrap();
    let f = |g: &mut Graph, vars: &[crate::autodiff::Var]| sample_loss(&net, g, vars, &p, &[], &[]).unwrap();
    let inputs = smooth_point(1e-3, |k| randomized(&net, 90 + 100 * k), &f);
    check_grad_at(&inputs, 1e-3, 1e-3, f);
}

#[test]
fn visibility_net_loss_gradients_match_finite_differences() {
    let (s, dirs, sample) = vis_fixture(8, 4, 21);
    let net = TrainedInpainter::new(InpaintNetConfig::visibility_net(2), 5).unwrap();
    let data = InpaintDataset { support: s, directions: dirs.clone(), samples: Vec::new() };
    let p = prepare(&net, &data, &sample, 0.1).unwrap();
    let f = |g: &mut Graph, vars: &[crate::autodiff::Var]| sample_loss(&net, g, vars, &p, &dirs, &[0, 2, 3]).unwrap();
    let inputs = smooth_point(1e-3, |k| randomized(&net, 60 + 100 * k), &f);
    check_grad_at(&inputs, 1e-3, 1e-3, f);
}

/// Parameter tensors of `net` with random values (the zero last layer
/// would hide every other gradient).
fn randomized(net: &TrainedInpainter, seed: u64) -> Vec<Tensor> {
    let mut n = net.clone();
    randomize(&mut n, seed, 1.0);
    n.params.iter().map(|(_, _, t)| t.clone()).collect()
}

fn toy_normal_set(seed: u64) -> InpaintDataset {
    let s = two_charts(16);
    let samples = (0..2)
        .map(|i| InpaintSample {
            target: smooth_normals(&s, 0.7 * i as f64),
            input_mask: random_mask(256, 0.15, seed + i as u64),
            normals: None,
        })
        .collect();
    InpaintDataset { support: s, directions: Vec::new(), samples }
}

#[test]
fn training_halves_the_toy_loss_within_200_steps() {
    let data = toy_normal_set(30);
    let mut net = TrainedInpainter::new(InpaintNetConfig::normal_net(8), 6).unwrap();
    let cfg = InpaintTrainConfig { epochs: 100, ..Default::default() };
    let log = train_inpainter(&mut net, &data, &cfg, |_, _| {}).unwrap();
    assert_eq!(log.step_losses.len(), 200);
    let first = log.epoch_losses[0];
    let last = *log.epoch_losses.last().unwrap();
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn zero_epochs_and_empty_dataset() {
    let data = toy_normal_set(1);
    let mut net = TrainedInpainter::new(InpaintNetConfig::normal_net(4), 6).unwrap();
    let before = net.params.clone();
    let cfg = InpaintTrainConfig { epochs: 0, ..Default::default() };
    let log = train_inpainter(&mut net, &data, &cfg, |_, _| {}).unwrap();
    assert!(log.step_losses.is_empty());
    for ((_, _, a), (_, _, b)) in net.params.iter().zip(before.iter()) {
        assert_eq!(a.data(), b.data());
    }
    let empty = InpaintDataset { samples: Vec::new(), ..data };
    assert!(train_inpainter(&mut net, &empty, &cfg, |_, _| {}).is_err());
}

#[test]
fn dense_pair_has_no_masked_loss() {
    let s = one_chart(8, 8);
    let sample = InpaintSample { target: smooth_normals(&s, 0.0), input_mask: vec![true; 64], normals: None };
    let net = TrainedInpainter::new(InpaintNetConfig::normal_net(4), 1).unwrap();
    let data = InpaintDataset { support: s, directions: Vec::new(), samples: Vec::new() };
    let p = prepare(&net, &data, &sample, 0.1).unwrap();
    let mut g = Graph::new();
    let vars = net.const_vars(&mut g);
    let l = sample_loss(&net, &mut g, &vars, &p, &[], &[]).unwrap();
    assert!(g.data(l)[0].abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn partial_conv_masks_never_shrink(seed in 0u64..10_000, keep in 0.0f64..0.6) {
        let net = TrainedInpainter::new(InpaintNetConfig::visibility_net(4), seed).unwrap();
        let (h, w) = (8, 10);
        let m = random_mask(h * w, keep, seed);
        let mut g = Graph::new();
        let vars = net.const_vars(&mut g);
        let c = net.config.in_channels();
        let dm = DenseUVMap { height: h, width: w, channels: c, values: vec![0.5; h * w * c], valid: m.clone() };
        let x = g.constant(Tensor::new(&[1, c, h, w], to_nchw(&dm)).unwrap());
        let tr = net.record(&mut g, &vars, x, &mask_of(&m)).unwrap();
        let mut prev = mask_of(&m);
        for layer in &tr.masks {
            prop_assert_eq!(layer.len(), prev.len());
            prop_assert!(layer.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = layer.clone();
        }
    }
}
