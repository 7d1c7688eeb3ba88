use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use super::net::{check_inputs, normal_pass, visibility_pass};
use super::{morph_inpaint, DenseUVMap, InpaintInputs, InpaintKind, TrainedInpainter};
use crate::autodiff::{Adam, AdamConfig, Graph, ParamId, TexelSupport, Tensor, Var};
use crate::math::Vec3;
use crate::{rng, Error, Result};

/// One training pair: a dense ground-truth map and the texels a simulated
/// bake would have kept.
#[derive(Clone, Debug)]
pub struct InpaintSample {
    pub target: DenseUVMap,
    pub input_mask: Vec<bool>,
    /// Dense normals of the same pose (visibility net only).
    pub normals: Option<DenseUVMap>,
}

#[derive(Clone, Debug)]
pub struct InpaintDataset {
    pub support: TexelSupport,
    /// Light directions of the visibility channels (visibility net only).
    pub directions: Vec<Vec3>,
    pub samples: Vec<InpaintSample>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InpaintTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Steps of linear lr ramp. The head starts at zero, so the first
    /// hidden-layer gradients are tiny and Adam would blow them up to full
    /// steps.
    pub warmup_steps: usize,
    /// Weight of the L1 term on texels that were already valid.
    pub valid_weight: f64,
    /// Directions drawn per visibility step.
    pub direction_subset: usize,
    pub seed: u64,
}

impl Default for InpaintTrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 1e-2, warmup_steps: 50, valid_weight: 0.1, direction_subset: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InpaintTrainLog {
    pub step_losses: Vec<f64>,
    /// Mean step loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// A sample with its sparse input, baseline fill and per-texel loss weights.
pub(crate) struct Prepared {
    pub sparse: DenseUVMap,
    pub base: DenseUVMap,
    pub target: DenseUVMap,
    pub normals: Option<DenseUVMap>,
    /// Weight of each texel's L1 (already divided by the region size).
    pub weight: Vec<f32>,
}

pub(crate) fn prepare(net: &TrainedInpainter, data: &InpaintDataset, s: &InpaintSample, valid_weight: f64) -> Result<Prepared> {
    let t = &s.target;
    if s.input_mask.len() != t.len() {
        return Err(Error::shape("train_inpainter", alloc::format!("{} mask flags for {} texels", s.input_mask.len(), t.len())));
    }
    let sparse = t.masked(&s.input_mask)?;
    let normals = s.normals.clone();
    let inputs = match net.config.kind {
        InpaintKind::Normal => InpaintInputs::Normals { sparse: &sparse },
        InpaintKind::Visibility => InpaintInputs::Visibility {
            sparse: &sparse,
            normals: normals.as_ref().ok_or(Error::Missing { what: "normal map", id: alloc::string::String::from("visibility sample") })?,
            directions: &data.directions,
        },
    };
    check_inputs(net, &inputs, &data.support)?;
    let base = morph_inpaint(&sparse, &data.support, net.config.morph_iterations, net.config.kind == InpaintKind::Normal)?.map;
    let hole: Vec<bool> = (0..t.len()).map(|k| t.valid[k] && !sparse.valid[k] && base.valid[k]).collect();
    let nh = hole.iter().filter(|v| **v).count();
    let nv = sparse.valid_count();
    let weight = (0..t.len())
        .map(|k| {
            if hole[k] {
                (1.0 / nh as f64) as f32
            } else if sparse.valid[k] && nv > 0 {
                (valid_weight / nv as f64) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(Prepared { sparse, base, target: t.clone(), normals, weight })
}

/// Hole-region mean L1 plus `valid_weight` × valid-region mean L1, both per
/// channel, recorded on `g`. `subset` picks the visibility directions.
pub(crate) fn sample_loss(
    net: &TrainedInpainter,
    g: &mut Graph,
    vars: &[Var],
    p: &Prepared,
    directions: &[Vec3],
    subset: &[usize],
) -> Result<Var> {
    let hw = p.target.len();
    let (pred, target, per_texel) = match net.config.kind {
        InpaintKind::Normal => {
            let (pred, _) = normal_pass(net, g, vars, &p.sparse, &p.base)?;
            let mut t = vec![0.0f32; 3 * hw];
            for k in 0..hw {
                for c in 0..3 {
                    t[c * hw + k] = p.target.values[k * 3 + c];
                }
            }
            (pred, t, 3)
        }
        InpaintKind::Visibility => {
            let normals = p.normals.as_ref().expect("checked in prepare");
            let (pred, _) = visibility_pass(net, g, vars, &p.sparse, &p.base, normals, directions, subset)?;
            let d = p.target.channels;
            let mut t = vec![0.0f32; subset.len() * hw];
            for (si, &di) in subset.iter().enumerate() {
                for k in 0..hw {
                    t[si * hw + k] = p.target.values[k * d + di];
                }
            }
            (pred, t, subset.len())
        }
    };
    let w: Vec<f32> = (0..per_texel).flat_map(|_| p.weight.iter().map(|v| v / per_texel as f32)).collect();
    let shape = g.shape(pred).to_vec();
    let tv = g.constant(Tensor::new(&shape, target)?);
    let diff = g.sub(pred, tv)?;
    let wd = g.mul_const(diff, &w)?;
    let a = g.abs(wd);
    Ok(g.sum(a))
}

/// The training loss of one sample as a function of the net's parameters
/// (in `net.params` order), for gradient checks and loss probes.
pub struct InpaintObjective<'a> {
    net: &'a TrainedInpainter,
    prepared: Prepared,
    directions: Vec<Vec3>,
    subset: Vec<usize>,
}

impl<'a> InpaintObjective<'a> {
    /// `subset` picks the visibility directions; the normal net ignores it.
    pub fn new(net: &'a TrainedInpainter, data: &InpaintDataset, sample: &InpaintSample, valid_weight: f64, subset: &[usize]) -> Result<Self> {
        if net.config.kind == InpaintKind::Visibility && (subset.is_empty() || subset.iter().any(|d| *d >= data.directions.len())) {
            return Err(Error::invalid("InpaintObjective", "direction subset empty or out of range"));
        }
        let prepared = prepare(net, data, sample, valid_weight)?;
        Ok(Self { net, prepared, directions: data.directions.clone(), subset: subset.to_vec() })
    }

    pub fn loss(&self, g: &mut Graph, vars: &[Var]) -> Result<Var> {
        sample_loss(self.net, g, vars, &self.prepared, &self.directions, &self.subset)
    }
}

/// Adam on the masked L1 objective, one sample per step. With
/// `epochs = 0` the parameters are untouched.
pub fn train_inpainter(
    net: &mut TrainedInpainter,
    data: &InpaintDataset,
    cfg: &InpaintTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<InpaintTrainLog> {
    if data.samples.is_empty() {
        return Err(Error::invalid("train_inpainter", "empty dataset"));
    }
    if !(cfg.lr > 0.0) || !(cfg.valid_weight >= 0.0) || cfg.direction_subset == 0 {
        return Err(Error::invalid("train_inpainter", "lr and subset size must be positive, valid weight non-negative"));
    }
    let prepared: Vec<Prepared> = data
        .samples
        .iter()
        .map(|s| prepare(net, data, s, cfg.valid_weight))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut log = InpaintTrainLog::default();
    let nd = data.directions.len();
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, 0x1e00 + epoch as u64);
        let order = rng::permutation(&mut r, prepared.len());
        let mut sum = 0.0;
        for &i in &order {
            let subset: Vec<usize> = if net.config.kind == InpaintKind::Visibility {
                let mut s = sample(&mut r, nd, cfg.direction_subset.min(nd)).into_vec();
                s.sort_unstable();
                s
            } else {
                Vec::new()
            };
            let mut g = Graph::new();
            let vars: Vec<Var> = (0..net.params.len()).map(|j| g.param(&net.params, ParamId(j))).collect();
            let loss = sample_loss(net, &mut g, &vars, &prepared[i], &data.directions, &subset)?;
            let l = g.data(loss)[0] as f64;
            g.backward_into(loss, &mut net.params)?;
            let t = adam.steps() as f64 + 1.0;
            adam.config.lr = cfg.lr * (t / cfg.warmup_steps.max(1) as f64).min(1.0);
            adam.step(&mut net.params)?;
            log.step_losses.push(l);
            sum += l;
        }
        let mean = sum / prepared.len() as f64;
        log.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(log)
}
