//! Relighting losses and the material-decomposition training loop.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::rays::{prepare_rays, FrameSupport, RayConfig, RaySamples, RelightFrame};
use super::render::{check_model, clamp_to_rects, material_taps, record_offsets, rects, relight_render, RelightModel, RenderSettings};
use super::{param_vars, FeatureUVMap, MaterialMaps, UVDeltaNet};
use crate::autodiff::{Adam, AdamConfig, Gradients, Graph, ParamSet, TexelSupport, Tensor, Var};
use crate::camera::Camera;
use crate::density::DensityField;
use crate::envlight::EnvironmentMap;
use crate::image::Image;
use crate::math::PI;
use crate::shading::{specular_radiance, visible_irradiance, ShadingOptions, RHO_MIN};
use crate::{par, rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelightLossWeights {
    pub l2: f64,
    pub smooth: f64,
    pub uv: f64,
}

impl Default for RelightLossWeights {
    fn default() -> Self {
        Self { l2: 100.0, smooth: 1.0, uv: 1.0 }
    }
}

/// The recorded total and its unweighted parts.
#[derive(Clone, Copy, Debug)]
pub struct RelightLoss {
    pub total: Var,
    pub l2: f64,
    pub smooth: f64,
    pub uv: f64,
}

/// `Σ|forward differences|` of an `[H, W, C]` raster over `H·W·C`, with
/// row differences between stacked patches of height `patch` left out.
fn total_variation(g: &mut Graph, x: Var, patch: Option<usize>) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let n = (s[0] * s[1] * s[2]) as f32;
    let dx = g.diff_x(x)?;
    let dx = g.abs(dx);
    let sx = g.sum(dx);
    let dy = g.diff_y(x)?;
    let dy = match patch {
        Some(p) if p < s[0] => {
            let row = s[1] * s[2];
            let m: Vec<f32> = (0..(s[0] - 1) * row).map(|i| if (i / row + 1) % p == 0 { 0.0 } else { 1.0 }).collect();
            g.mul_const(dy, &m)?
        }
        _ => dy,
    };
    let dy = g.abs(dy);
    let sy = g.sum(dy);
    g.weighted_sum(&[(1.0 / n, sx), (1.0 / n, sy)])
}

/// `λ_L2·mean (Ĩ − I)² + λ_smooth·L_smooth + λ_uv·L_uv`.
///
/// `pred` is `[R, 3]` against `target` (`3R` values). `albedo` (`[H, W, 3]`)
/// and `roughness` (`[H, W, 1]`) are the activated maps; their smoothness is
/// the mean absolute forward difference along each axis. `eps` is the
/// per-pixel UV offset of the batch's patches stacked vertically
/// (`[n·patch, patch, 2]`); `L_uv` is its mean square plus its total
/// variation inside each patch.
#[allow(clippy::too_many_arguments)]
pub fn relight_loss(
    g: &mut Graph,
    pred: Var,
    target: &[f32],
    albedo: Var,
    roughness: Var,
    eps: Var,
    patch: usize,
    w: &RelightLossWeights,
) -> Result<RelightLoss> {
    let (ps, a, b, e) = (g.shape(pred).to_vec(), g.shape(albedo).to_vec(), g.shape(roughness).to_vec(), g.shape(eps).to_vec());
    let ok = ps.len() == 2
        && ps[1] == 3
        && target.len() == ps[0] * 3
        && a.len() == 3
        && a[2] == 3
        && b.len() == 3
        && b[2] == 1
        && a[..2] == b[..2]
        && e.len() == 3
        && e[2] == 2
        && patch > 0
        && e[1] == patch
        && e[0] % patch == 0
        && e[0] * e[1] == ps[0];
    if !ok || a[0] < 2 || a[1] < 2 || patch < 2 {
        return Err(Error::shape(
            "relight_loss",
            alloc::format!("pred {ps:?}, {} targets, albedo {a:?}, roughness {b:?}, offsets {e:?}, patch {patch}", target.len()),
        ));
    }
    let t = g.constant(Tensor::new(&ps, target.to_vec())?);
    let l2 = g.mse(pred, t)?;
    let ta = total_variation(g, albedo, None)?;
    let tb = total_variation(g, roughness, None)?;
    let smooth = g.add(ta, tb)?;
    let sq = g.square(eps);
    let m2 = g.mean(sq);
    let te = total_variation(g, eps, Some(patch))?;
    let uv = g.add(m2, te)?;
    let vals = [l2, smooth, uv].map(|v| g.data(v)[0] as f64);
    let total = g.weighted_sum(&[(w.l2 as f32, l2), (w.smooth as f32, smooth), (w.uv as f32, uv)])?;
    Ok(RelightLoss { total, l2: vals[0], smooth: vals[1], uv: vals[2] })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionConfig {
    pub epochs: usize,
    /// Share of epochs (from the start) with the UV-offset net and feature
    /// grid frozen.
    pub frozen_fraction: f64,
    pub lr_materials: f64,
    pub lr_networks: f64,
    /// Side of the square pixel patches.
    pub patch: usize,
    pub patches_per_step: usize,
    pub weights: RelightLossWeights,
    pub rays: RayConfig,
    pub shading: ShadingOptions,
    pub seed: u64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            frozen_fraction: 0.25,
            lr_materials: 1e-2,
            lr_networks: 1e-3,
            patch: 16,
            patches_per_step: 8,
            weights: RelightLossWeights::default(),
            rays: RayConfig::default(),
            shading: ShadingOptions::default(),
            seed: 0,
        }
    }
}

impl DecompositionConfig {
    /// Epochs with the UV-offset net frozen.
    pub fn frozen_epochs(&self) -> usize {
        libm::round(self.frozen_fraction.clamp(0.0, 1.0) * self.epochs as f64) as usize
    }

    fn check(&self) -> Result<()> {
        let w = &self.weights;
        if !(self.lr_materials > 0.0 && self.lr_networks > 0.0 && w.l2 > 0.0 && w.smooth >= 0.0 && w.uv >= 0.0) {
            return Err(Error::invalid("DecompositionConfig", "learning rates and λ_L2 must be positive, other weights non-negative"));
        }
        if self.patch < 2 || self.patches_per_step == 0 {
            return Err(Error::invalid("DecompositionConfig", "patch side ≥ 2 and at least one patch per step"));
        }
        self.rays.check()
    }
}

/// One training image: a camera of frame `frame`, lit by `envs[env]`.
#[derive(Clone, Debug)]
pub struct DecompositionView {
    pub frame: usize,
    pub env: usize,
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub l2: f64,
    pub smooth: f64,
    pub uv: f64,
    pub frozen: bool,
    /// Largest |ε| component seen this epoch.
    pub max_offset: f32,
}

#[derive(Clone, Debug, Default)]
pub struct DecompositionLog {
    pub epochs: Vec<EpochMetrics>,
    /// Per material texel, the summed lookup weight of all training samples
    /// (with zero offsets). Zero marks texels no training pixel saw.
    pub coverage: Vec<f32>,
}

pub(super) struct PreparedView {
    rays: RaySamples,
    /// `E/π` per sample.
    irr: Vec<[f32; 3]>,
    frame: usize,
    env: usize,
    width: usize,
    image: Image,
}

/// A minibatch of patches, samples packed ray by ray.
#[derive(Default)]
pub(super) struct Batch {
    offsets: Vec<usize>,
    pub(super) weight: Vec<f32>,
    uvh: Vec<[f32; 3]>,
    label: Vec<u16>,
    irr: Vec<[f32; 3]>,
    /// `(view, sample)` origin of each sample.
    origin: Vec<(usize, usize)>,
    target: Vec<f32>,
}

pub(super) fn gather(views: &[PreparedView], patches: &[(usize, usize, usize)], p: usize) -> Batch {
    let mut b = Batch { offsets: vec![0], ..Default::default() };
    for &(vi, x0, y0) in patches {
        let v = &views[vi];
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                let r = y * v.width + x;
                for s in v.rays.offsets[r]..v.rays.offsets[r + 1] {
                    b.weight.push(v.rays.weight[s]);
                    b.uvh.push(v.rays.uvh[s]);
                    b.label.push(v.rays.label[s]);
                    b.irr.push(v.irr[s]);
                    b.origin.push((vi, s));
                }
                b.offsets.push(b.weight.len());
                b.target.extend_from_slice(v.image.pixel(x, y));
            }
        }
    }
    b
}

/// `L = 1[n·ω₀ > 0]·(a ⊙ E/π + S(ρ))` per sample, with `S` and `∂S/∂ρ`
/// evaluated against each sample's own visibility and environment.
fn shade_op(
    g: &mut Graph,
    a: Var,
    rho: Var,
    irr: &[[f32; 3]],
    spec: impl Fn(usize, f64) -> ([f64; 3], [f64; 3]) + Sync,
) -> Result<Var> {
    let s = irr.len();
    let (ad, rd) = (g.data(a), g.data(rho));
    let parts: Vec<([f32; 3], [f32; 3])> = par::map_range(s, |i| {
        let (sv, ds) = spec(i, rd[i] as f64);
        let v = core::array::from_fn(|c| (ad[3 * i + c] as f64 * irr[i][c] as f64 + sv[c]) as f32);
        (v, ds.map(|x| x as f32))
    });
    let value: Vec<f32> = parts.iter().flat_map(|p| p.0).collect();
    let dspec: Vec<[f32; 3]> = parts.into_iter().map(|p| p.1).collect();
    let irr = irr.to_vec();
    let t = Tensor::new(&[s, 3], value)?;
    Ok(g.custom(
        &[a, rho],
        t,
        Box::new(move |_, gr, need| {
            let ga = need[0].then(|| (0..3 * irr.len()).map(|k| gr[k] * irr[k / 3][k % 3]).collect());
            let gr_ = need[1].then(|| (0..irr.len()).map(|i| (0..3).map(|c| gr[3 * i + c] * dspec[i][c]).sum()).collect());
            vec![ga, gr_]
        }),
    ))
}

/// Vars of all decomposition parameters on one graph.
pub(super) struct Vars {
    pub materials: Vec<Var>,
    pub net: Vec<Var>,
    pub features: Vec<Var>,
}

pub(super) struct Context<'a> {
    pub frames: &'a [RelightFrame],
    pub envs: &'a [EnvironmentMap],
    pub views: &'a [PreparedView],
    pub material_support: TexelSupport,
    pub feature_support: TexelSupport,
    pub cfg: &'a DecompositionConfig,
}

pub(super) struct StepOut {
    pub loss: RelightLoss,
    pub max_offset: f32,
    /// False when the batch hit nothing, so the offset net was never run.
    pub offsets_used: bool,
}

pub(super) fn record_step(
    g: &mut Graph,
    ctx: &Context,
    vars: &Vars,
    m: (&MaterialMaps, &UVDeltaNet, &FeatureUVMap),
    b: &Batch,
) -> Result<StepOut> {
    let (materials, net, features) = m;
    let mesh = &ctx.frames[0].shell.body.mesh;
    let a_pre = vars.materials[materials.albedo_id().0];
    let r_pre = vars.materials[materials.roughness_id().0];
    let albedo = g.sigmoid(a_pre);
    let rs = g.sigmoid(r_pre);
    let rough = g.scale(rs, (1.0 - RHO_MIN) as f32);
    let rough = g.add_scalar(rough, RHO_MIN as f32);
    let n = b.weight.len();
    let (pred, eps_pix, max_offset) = if n == 0 {
        let z = g.constant(Tensor::zeros(&[b.offsets.len() - 1, 3]));
        let e = g.constant(Tensor::zeros(&[b.offsets.len() - 1, 2]));
        (z, e, 0.0)
    } else {
        let eps = record_offsets(g, net, &vars.net, vars.features[features.id().0], &ctx.feature_support, &b.uvh, &b.label)?;
        let max_offset = g.data(eps).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let uv = g.constant(Tensor::new(&[n, 2], b.uvh.iter().flat_map(|p| [p[0], p[1]]).collect())?);
        let moved = g.add(uv, eps)?;
        let uvc = clamp_to_rects(g, moved, &rects(mesh, &b.label));
        let sup = (&ctx.material_support, &b.label[..]);
        let a = g.grid_sample(albedo, uvc, Some(sup))?;
        let rho = g.grid_sample(rough, uvc, Some(sup))?;
        let opts = ctx.cfg.shading;
        let spec = |i: usize, r: f64| {
            let (vi, s) = b.origin[i];
            let v = &ctx.views[vi];
            let (nrm, view) = (v.rays.normal[s], v.rays.view[s]);
            if nrm.dot(view) <= 0.0 {
                return ([0.0; 3], [0.0; 3]);
            }
            let vis_map = &ctx.frames[v.frame].maps.as_ref().expect("checked").visibility;
            specular_radiance(nrm, view, &v.rays.visibility(s, vis_map), r, &ctx.envs[v.env], &opts)
        };
        let l = shade_op(g, a, rho, &b.irr, spec)?;
        let pred = g.segment_weighted_sum(l, &b.offsets, &b.weight)?;
        let ep = g.segment_weighted_sum(eps, &b.offsets, &b.weight)?;
        (pred, ep, max_offset)
    };
    let p = ctx.cfg.patch;
    let rays = b.offsets.len() - 1;
    let eps_raster = g.reshape(eps_pix, &[rays / p, p, 2])?;
    let loss = relight_loss(g, pred, &b.target, albedo, rough, eps_raster, p, &ctx.cfg.weights)?;
    Ok(StepOut { loss, max_offset, offsets_used: n > 0 })
}

fn accumulate(grads: &Gradients, vars: &[Var], set: &mut ParamSet) {
    for (i, v) in vars.iter().enumerate() {
        if let Some(gv) = grads.get(*v) {
            set.get_mut(crate::autodiff::ParamId(i)).accumulate_grad(gv);
        }
    }
}

pub(super) fn prepare_views(
    field: &DensityField,
    frames: &[RelightFrame],
    envs: &[EnvironmentMap],
    views: &[DecompositionView],
    cfg: &DecompositionConfig,
) -> Result<Vec<PreparedView>> {
    views
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let frame = frames.get(v.frame).ok_or_else(|| Error::Missing { what: "frame", id: alloc::format!("{}", v.frame) })?;
            let env = envs.get(v.env).ok_or_else(|| Error::Missing { what: "environment map", id: alloc::format!("{}", v.env) })?;
            let maps = frame.checked_maps(env.len())?;
            let (w, h) = (v.camera.width, v.camera.height);
            if v.image.width != w || v.image.height != h || v.image.channels != 3 {
                return Err(Error::shape(
                    "train_decomposition",
                    alloc::format!("view {vi}: {}x{}x{} image for a {w}x{h} camera", v.image.width, v.image.height, v.image.channels),
                ));
            }
            let sup = FrameSupport::new(frame, maps);
            let pixels: Vec<usize> = (0..w * h).collect();
            let rays = prepare_rays(field, frame, maps, &sup, &v.camera, &pixels, &cfg.rays, vi as u64 + 1)?;
            let opts = cfg.shading;
            let irr = par::map_range(rays.len(), |s| {
                let (n, view) = (rays.normal[s], rays.view[s]);
                if n.dot(view) <= 0.0 {
                    return [0.0; 3];
                }
                visible_irradiance(n, &rays.visibility(s, &maps.visibility), env, &opts).map(|e| (e / PI) as f32)
            });
            Ok(PreparedView { rays, irr, frame: v.frame, env: v.env, width: w, image: v.image.clone() })
        })
        .collect()
}

/// The training loss on fixed pixel patches as a plain function of the
/// parameters, for gradient checks and loss probes. The inputs are
/// `[albedo pre, roughness pre]`, followed with `networks` by the feature grid
/// and the UV-offset layers (its frozen meta tensor stays a constant).
pub struct PatchObjective<'a> {
    frames: &'a [RelightFrame],
    envs: &'a [EnvironmentMap],
    views: Vec<PreparedView>,
    batch: Batch,
    cfg: DecompositionConfig,
    materials: MaterialMaps,
    uv_delta: UVDeltaNet,
    features: FeatureUVMap,
    networks: bool,
}

impl<'a> PatchObjective<'a> {
    /// `patches` are `(view, x0, y0)` corners of `cfg.patch`-sized squares.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &RelightModel,
        frames: &'a [RelightFrame],
        envs: &'a [EnvironmentMap],
        views: &[DecompositionView],
        cfg: &DecompositionConfig,
        patches: &[(usize, usize, usize)],
        networks: bool,
    ) -> Result<Self> {
        cfg.check()?;
        check_model(model)?;
        if frames.is_empty() {
            return Err(Error::invalid("PatchObjective", "no frames"));
        }
        let prepared = prepare_views(model.field, frames, envs, views, cfg)?;
        for &(vi, x0, y0) in patches {
            let v = prepared.get(vi).ok_or_else(|| Error::Missing { what: "view", id: alloc::format!("{vi}") })?;
            if x0 + cfg.patch > v.width || y0 + cfg.patch > v.image.height {
                return Err(Error::invalid("PatchObjective", alloc::format!("patch at ({x0}, {y0}) leaves view {vi}")));
            }
        }
        let batch = gather(&prepared, patches, cfg.patch);
        Ok(Self {
            frames,
            envs,
            views: prepared,
            batch,
            cfg: *cfg,
            materials: model.materials.clone(),
            uv_delta: model.uv_delta.clone(),
            features: model.features.clone(),
            networks,
        })
    }

    /// Current parameter values in input order.
    pub fn inputs(&self) -> Vec<Tensor> {
        let mut v: Vec<Tensor> = self.materials.params.iter().map(|(_, _, t)| t.clone()).collect();
        if self.networks {
            v.extend(self.features.params.iter().map(|(_, _, t)| t.clone()));
            v.extend(self.uv_delta.params.iter().skip(1).map(|(_, _, t)| t.clone()));
        }
        v
    }

    /// Ray samples in the batch; zero when the patches miss the body.
    pub fn samples(&self) -> usize {
        self.batch.weight.len()
    }

    pub fn loss(&self, g: &mut Graph, x: &[Var]) -> Result<RelightLoss> {
        let nm = self.materials.params.len();
        let (net, features) = if self.networks {
            let nf = self.features.params.len();
            let mut net = vec![g.constant(self.uv_delta.params.get(crate::autodiff::ParamId(0)).clone())];
            net.extend_from_slice(&x[nm + nf..]);
            (net, x[nm..nm + nf].to_vec())
        } else {
            let net = self.uv_delta.params.iter().map(|(_, _, t)| g.constant(t.clone())).collect();
            let features = self.features.params.iter().map(|(_, _, t)| g.constant(t.clone())).collect();
            (net, features)
        };
        let mesh = &self.frames[0].shell.body.mesh;
        let ctx = Context {
            frames: self.frames,
            envs: self.envs,
            views: &self.views,
            material_support: mesh.texel_support(self.materials.resolution()),
            feature_support: mesh.texel_support(self.features.resolution()),
            cfg: &self.cfg,
        };
        let vars = Vars { materials: x[..nm].to_vec(), net, features };
        Ok(record_step(g, &ctx, &vars, (&self.materials, &self.uv_delta, &self.features), &self.batch)?.loss)
    }
}

/// Fits the material maps (and, after the frozen phase, the UV-offset net
/// and feature grid) to `views` with Adam on [`relight_loss`]. `on_epoch`
/// sees the metrics and the current parameters, e.g. for checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn train_decomposition(
    field: &DensityField,
    frames: &[RelightFrame],
    envs: &[EnvironmentMap],
    views: &[DecompositionView],
    materials: &mut MaterialMaps,
    uv_delta: &mut UVDeltaNet,
    features: &mut FeatureUVMap,
    cfg: &DecompositionConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &MaterialMaps, &UVDeltaNet, &FeatureUVMap),
) -> Result<DecompositionLog> {
    cfg.check()?;
    check_model(&RelightModel { field, materials, uv_delta, features })?;
    if views.is_empty() || frames.is_empty() {
        return Err(Error::invalid("train_decomposition", "no training views"));
    }
    let mesh = frames[0].shell.body.mesh.clone();
    if frames.iter().any(|f| !alloc::sync::Arc::ptr_eq(&f.shell.body.mesh, &mesh) && f.shell.body.mesh.faces != mesh.faces) {
        return Err(Error::invalid("train_decomposition", "frames use different proxy meshes"));
    }
    let prepared = prepare_views(field, frames, envs, views, cfg)?;
    let ctx = Context {
        frames,
        envs,
        views: &prepared,
        material_support: mesh.texel_support(materials.resolution()),
        feature_support: mesh.texel_support(features.resolution()),
        cfg,
    };
    let p = cfg.patch;
    let patches: Vec<(usize, usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| {
            let h = v.image.height;
            (0..h / p).flat_map(move |py| (0..v.width / p).map(move |px| (vi, px * p, py * p)))
        })
        .collect();
    if patches.is_empty() {
        return Err(Error::invalid("train_decomposition", alloc::format!("images smaller than one {p}x{p} patch")));
    }
    let mut log = DecompositionLog { coverage: coverage(&ctx, &prepared, materials.resolution()), ..Default::default() };
    let mut adam_m = Adam::new(AdamConfig::with_lr(cfg.lr_materials));
    let mut adam_n = Adam::new(AdamConfig::with_lr(cfg.lr_networks));
    let mut adam_f = Adam::new(AdamConfig::with_lr(cfg.lr_networks));
    let frozen = cfg.frozen_epochs();
    for epoch in 0..cfg.epochs {
        let is_frozen = epoch < frozen;
        uv_delta.set_trainable(!is_frozen);
        features.params.set_trainable("feature.", !is_frozen);
        let mut r = rng::stream(cfg.seed, 0x3e00 + epoch as u64);
        let order = rng::permutation(&mut r, patches.len());
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        let mut max_offset = 0.0f32;
        for chunk in order.chunks(cfg.patches_per_step) {
            let batch_patches: Vec<_> = chunk.iter().map(|i| patches[*i]).collect();
            let b = gather(&prepared, &batch_patches, p);
            let mut g = Graph::new();
            let vars = Vars {
                materials: param_vars(&mut g, &materials.params),
                net: param_vars(&mut g, &uv_delta.params),
                features: param_vars(&mut g, &features.params),
            };
            let out = record_step(&mut g, &ctx, &vars, (materials, uv_delta, features), &b)?;
            let grads = g.backward(out.loss.total)?;
            accumulate(&grads, &vars.materials, &mut materials.params);
            adam_m.step(&mut materials.params)?;
            if !is_frozen && out.offsets_used {
                accumulate(&grads, &vars.net, &mut uv_delta.params);
                accumulate(&grads, &vars.features, &mut features.params);
                adam_n.step(&mut uv_delta.params)?;
                adam_f.step(&mut features.params)?;
            }
            let l = out.loss;
            for (s, v) in sums.iter_mut().zip([g.data(l.total)[0] as f64, l.l2, l.smooth, l.uv]) {
                *s += v;
            }
            max_offset = max_offset.max(out.max_offset);
            steps += 1;
        }
        let k = steps as f64;
        let m = EpochMetrics {
            epoch,
            loss: sums[0] / k,
            l2: sums[1] / k,
            smooth: sums[2] / k,
            uv: sums[3] / k,
            frozen: is_frozen,
            max_offset,
        };
        on_epoch(&m, materials, uv_delta, features);
        log.epochs.push(m);
    }
    uv_delta.set_trainable(true);
    features.params.set_trainable("feature.", true);
    Ok(log)
}

fn coverage(ctx: &Context, views: &[PreparedView], res: usize) -> Vec<f32> {
    let mesh = &ctx.frames[0].shell.body.mesh;
    let mut cov = vec![0.0f32; res * res];
    for v in views {
        let zero = vec![[0.0f32; 2]; v.rays.len()];
        let taps = material_taps(mesh, &ctx.material_support, &v.rays, &zero);
        for (s, (idx, w)) in taps.iter().enumerate() {
            for t in 0..4 {
                cov[idx[t]] += (w[t] * v.rays.weight[s] as f64) as f32;
            }
        }
    }
    cov
}

/// Mean squared error of full relit renders against the views' images.
pub fn evaluate_decomposition(
    model: &RelightModel,
    frames: &[RelightFrame],
    envs: &[EnvironmentMap],
    views: &[DecompositionView],
    settings: &RenderSettings,
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::invalid("evaluate_decomposition", "no views"));
    }
    let mut sum = 0.0;
    for v in views {
        let frame = frames.get(v.frame).ok_or_else(|| Error::Missing { what: "frame", id: alloc::format!("{}", v.frame) })?;
        let env = envs.get(v.env).ok_or_else(|| Error::Missing { what: "environment map", id: alloc::format!("{}", v.env) })?;
        let img = relight_render(model, frame, env, &v.camera, None, settings)?;
        if !img.same_shape(&v.image) {
            return Err(Error::shape("evaluate_decomposition", "image and camera differ in size"));
        }
        let se: f64 = img.data.iter().zip(&v.image.data).map(|(a, b)| ((a - b) as f64) * ((a - b) as f64)).sum();
        sum += se / img.data.len() as f64;
    }
    Ok(sum / views.len() as f64)
}

