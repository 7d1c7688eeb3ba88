//! Geometry-stage losses and training from posed multi-view patches.

use alloc::vec;
use alloc::vec::Vec;

use super::field::{DensityField, SampleBatch};
use super::posed::Shell;
use super::render::{composite_batch, intervals, sample_ray, Sampling};
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::camera::Camera;
use crate::image::Image;
use crate::math::{exp, ln};
use crate::{par, rng, Error, Result};

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryWeights {
    pub l2: f64,
    pub hard: f64,
    pub sigma: f64,
}

impl Default for GeometryWeights {
    fn default() -> Self {
        Self { l2: 100.0, hard: 0.01, sigma: 0.01 }
    }
}

/// Scalar loss handle plus the unweighted term values.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l2: f64,
    pub hard: f64,
    pub sigma: f64,
}

/// `−log(e^{−o} + e^{−(1−o)}) + log 2`: lowest at `o ∈ {0, 1}`.
pub fn hard_loss(o: f64) -> f64 {
    -ln(exp(-o) + exp(o - 1.0)) + core::f64::consts::LN_2
}

/// Geometry loss over `R` rays.
///
/// `pred` is `[R, 4]` (rgb, opacity), `target` holds `R·3` pixel values and
/// `mask` `R` foreground values. `sigma_pre` is `[S]`, and `sample_mask[s]`
/// is the mask value of the ray owning sample `s`; samples of rays with
/// mask below 1 count as empty space.
pub fn geometry_loss(
    g: &mut Graph,
    pred: Var,
    target: &[f32],
    mask: &[f32],
    sigma_pre: Var,
    sample_mask: &[f32],
    w: GeometryWeights,
) -> Result<LossTerms> {
    let ps = g.shape(pred).to_vec();
    let r = mask.len();
    if ps != [r, 4] || target.len() != r * 3 || g.shape(sigma_pre) != [sample_mask.len()] {
        return Err(Error::shape(
            "geometry_loss",
            alloc::format!("pred {:?}, {} targets, {} masks, {} sample masks", ps, target.len(), r, sample_mask.len()),
        ));
    }
    if r == 0 {
        return Err(Error::invalid("geometry_loss", "empty batch"));
    }
    let mut rgb_sel = vec![0.0f32; 12];
    for k in 0..3 {
        rgb_sel[k * 3 + k] = 1.0;
    }
    let rs = g.constant(Tensor::new(&[4, 3], rgb_sel)?);
    let os = g.constant(Tensor::new(&[4, 1], vec![0.0, 0.0, 0.0, 1.0])?);
    let rgb = g.matmul(pred, rs)?;
    let tgt = g.constant(Tensor::new(&[r, 3], target.to_vec())?);
    let l2 = g.mse(rgb, tgt)?;
    let op = g.matmul(pred, os)?;
    let hard = g.unary(op, |o| {
        let (a, b) = (exp(-(o as f64)), exp(o as f64 - 1.0));
        (hard_loss(o as f64) as f32, ((a - b) / (a + b)) as f32)
    });
    let hard = g.mean(hard);
    let empty: Vec<f32> = sample_mask.iter().map(|m| (1.0 - m).clamp(0.0, 1.0)).collect();
    let n_empty = empty.iter().filter(|e| **e > 0.0).count();
    let sig = g.sigmoid(sigma_pre);
    let sig = g.mul_const(sig, &empty)?;
    let sig = g.sum(sig);
    let sig = g.scale(sig, if n_empty > 0 { 1.0 / n_empty as f32 } else { 0.0 });
    let (l2v, hv, sv) = (g.data(l2)[0] as f64, g.data(hard)[0] as f64, g.data(sig)[0] as f64);
    let total = g.weighted_sum(&[(w.l2 as f32, l2), (w.hard as f32, hard), (w.sigma as f32, sig)])?;
    Ok(LossTerms { total, l2: l2v, hard: hv, sigma: sv })
}

/// One training image: matted RGB and a one-channel mask.
#[derive(Clone, Debug)]
pub struct GeometryView {
    pub pose: usize,
    pub camera: Camera,
    pub image: Image,
    pub mask: Image,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub samples_per_ray: usize,
    pub patch: usize,
    pub rays_per_batch: usize,
    pub seed: u64,
    pub weights: GeometryWeights,
}

impl Default for GeometryTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            samples_per_ray: 64,
            patch: 32,
            rays_per_batch: 4096,
            seed: 0,
            weights: GeometryWeights::default(),
        }
    }
}

/// Rays that cross the shell, with their on-shell samples resolved once.
#[derive(Clone, Debug, Default)]
pub struct PreparedGeometry {
    target: Vec<[f32; 3]>,
    mask: Vec<f32>,
    offsets: Vec<usize>,
    deltas: Vec<f32>,
    samples: SampleBatch,
    /// Rays of each image patch.
    patches: Vec<Vec<u32>>,
}

impl PreparedGeometry {
    pub fn rays(&self) -> usize {
        self.mask.len()
    }

    pub fn samples(&self) -> usize {
        self.samples.len()
    }

    pub fn patches(&self) -> usize {
        self.patches.len()
    }
}

/// Resolves stratified samples of every pixel ray against its pose's shell.
pub fn prepare_geometry(shells: &[Shell], views: &[GeometryView], cfg: &GeometryTrainConfig) -> Result<PreparedGeometry> {
    if views.is_empty() {
        return Err(Error::invalid("train_geometry", "empty dataset"));
    }
    let p = cfg.patch.max(1);
    let mut out = PreparedGeometry { offsets: vec![0], ..Default::default() };
    for (vi, view) in views.iter().enumerate() {
        let shell = shells
            .get(view.pose)
            .ok_or_else(|| Error::Missing { what: "pose", id: alloc::format!("{}", view.pose) })?;
        let (w, h) = (view.camera.width, view.camera.height);
        if view.image.width != w || view.image.height != h || view.image.channels != 3 {
            return Err(Error::shape("train_geometry", "image must be RGB at camera resolution"));
        }
        if view.mask.width != w || view.mask.height != h || view.mask.channels != 1 {
            return Err(Error::shape("train_geometry", "mask must be one channel at camera resolution"));
        }
        let per_ray = par::map_range(w * h, |i| {
            let (o, d) = view.camera.pixel_ray(i % w, i / w);
            let (near, far) = shell.near_far(o, d)?;
            let mut r = rng::stream(cfg.seed, ((vi as u64) << 32) | i as u64);
            let depths = sample_ray(near, far, cfg.samples_per_ray.max(2), Sampling::Stratified, &mut r).ok()?;
            let dl = intervals(&depths);
            let kept: Vec<_> = depths
                .iter()
                .zip(&dl)
                .filter_map(|(t, dt)| shell.locate(o + d * *t).map(|fp| (fp, *dt as f32)))
                .collect();
            (!kept.is_empty()).then_some(kept)
        });
        let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); w.div_ceil(p) * h.div_ceil(p)];
        for (i, kept) in per_ray.into_iter().enumerate() {
            let Some(kept) = kept else { continue };
            let (x, y) = (i % w, i / w);
            let ray = out.mask.len() as u32;
            let px = view.image.pixel(x, y);
            out.target.push([px[0], px[1], px[2]]);
            out.mask.push(view.mask.get(x, y, 0));
            for (fp, dt) in kept {
                out.samples.push(&fp);
                out.deltas.push(dt);
            }
            out.offsets.push(out.samples.len());
            tiles[(y / p) * w.div_ceil(p) + x / p].push(ray);
        }
        out.patches.extend(tiles.into_iter().filter(|t| !t.is_empty()));
    }
    if out.samples.is_empty() {
        return Err(Error::invalid("train_geometry", "no ray crosses the body shell"));
    }
    Ok(out)
}

/// Per-epoch averages of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub l2: f64,
    pub hard: f64,
    pub sigma: f64,
}

struct Batch {
    target: Vec<f32>,
    mask: Vec<f32>,
    offsets: Vec<usize>,
    deltas: Vec<f32>,
    samples: SampleBatch,
    sample_mask: Vec<f32>,
}

fn gather(data: &PreparedGeometry, rays: impl Iterator<Item = u32>) -> Batch {
    let mut b = Batch {
        target: Vec::new(),
        mask: Vec::new(),
        offsets: vec![0],
        deltas: Vec::new(),
        samples: SampleBatch::default(),
        sample_mask: Vec::new(),
    };
    for r in rays {
        let r = r as usize;
        b.target.extend_from_slice(&data.target[r]);
        b.mask.push(data.mask[r]);
        let (lo, hi) = (data.offsets[r], data.offsets[r + 1]);
        b.deltas.extend_from_slice(&data.deltas[lo..hi]);
        b.samples.canonical.extend_from_slice(&data.samples.canonical[lo..hi]);
        b.samples.local.extend_from_slice(&data.samples.local[lo..hi]);
        b.sample_mask.extend(core::iter::repeat_n(data.mask[r], hi - lo));
        b.offsets.push(b.deltas.len());
    }
    b
}

fn batch_loss(g: &mut Graph, field: &DensityField, b: &Batch, w: GeometryWeights) -> Result<LossTerms> {
    let fv = field.forward(g, &b.samples)?;
    let pred = composite_batch(g, fv.sigma, fv.color, &b.offsets, &b.deltas)?;
    geometry_loss(g, pred, &b.target, &b.mask, fv.sigma_pre, &b.sample_mask, w)
}

fn accumulate(acc: &mut EpochStats, g: &Graph, t: &LossTerms, weight: f64) {
    acc.loss += weight * g.data(t.total)[0] as f64;
    acc.l2 += weight * t.l2;
    acc.hard += weight * t.hard;
    acc.sigma += weight * t.sigma;
}

fn batches(data: &PreparedGeometry, cfg: &GeometryTrainConfig, order: &[usize]) -> Vec<Vec<u32>> {
    let per = (cfg.rays_per_batch / (cfg.patch * cfg.patch).max(1)).max(1);
    order
        .chunks(per)
        .map(|c| c.iter().flat_map(|&p| data.patches[p].iter().copied()).collect())
        .collect()
}

/// Loss of `field` over all prepared rays, without updating it.
pub fn evaluate_geometry(field: &DensityField, data: &PreparedGeometry, cfg: &GeometryTrainConfig) -> Result<EpochStats> {
    let order: Vec<usize> = (0..data.patches.len()).collect();
    let mut acc = EpochStats::default();
    let total = data.rays() as f64;
    for rays in batches(data, cfg, &order) {
        let n = rays.len() as f64;
        let b = gather(data, rays.into_iter());
        let mut g = Graph::new();
        let t = batch_loss(&mut g, field, &b, cfg.weights)?;
        accumulate(&mut acc, &g, &t, n / total);
    }
    Ok(acc)
}

/// Adam over shuffled patch batches; `on_epoch` sees each epoch's mean
/// (pre-step) loss terms.
pub fn train_geometry(
    field: &mut DensityField,
    data: &PreparedGeometry,
    cfg: &GeometryTrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<Vec<EpochStats>> {
    if data.patches.is_empty() {
        return Err(Error::invalid("train_geometry", "empty dataset"));
    }
    if field.params().is_none() {
        return Err(Error::invalid("train_geometry", "field has no trainable parameters"));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut log = Vec::with_capacity(cfg.epochs);
    let total = data.rays() as f64;
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, 0x6e6f6d65 + epoch as u64);
        let order = rng::permutation(&mut r, data.patches.len());
        let mut acc = EpochStats::default();
        for rays in batches(data, cfg, &order) {
            let n = rays.len() as f64;
            let b = gather(data, rays.into_iter());
            let mut g = Graph::new();
            let t = batch_loss(&mut g, field, &b, cfg.weights)?;
            accumulate(&mut acc, &g, &t, n / total);
            let params = field.params_mut().expect("trainable");
            g.backward_into(t.total, params)?;
            adam.step(params)?;
        }
        on_epoch(epoch, &acc);
        log.push(acc);
    }
    Ok(log)
}
