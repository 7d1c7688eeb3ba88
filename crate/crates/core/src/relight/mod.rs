//! Intrinsic decomposition in UV space: static albedo and roughness maps, a
//! small network that nudges material lookups off the proxy's UV layout, and
//! the single-bounce renderer that ties them to images.
//!
//! Material maps are stored as unconstrained pre-activations. Albedo reads
//! through a sigmoid, roughness through `ρ_min + (1 − ρ_min)·sigmoid`. One
//! copy serves every pose.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::math::{logitf, sigmoidf};
use crate::shading::RHO_MIN;
use crate::{rng, Error, Result};

mod rays;
mod render;
mod train;

pub use crate::shading::{
    brdf_eval, light_transport, BrdfSample, BrdfValue, ShadingOptions, SurfacePayload, DEFAULT_F0,
};
pub use rays::{DenseMaps, RayConfig, RelightFrame};
pub use render::{material_footprint, relight_render, RelightModel, RenderSettings};
pub use train::{
    evaluate_decomposition, relight_loss, train_decomposition, DecompositionConfig, DecompositionLog,
    DecompositionView, EpochMetrics, PatchObjective, RelightLoss, RelightLossWeights,
};

/// Hard bound on each component of the corrective UV offset.
pub const UV_DELTA_MAX: f32 = 0.02;
/// Default side and depth of the learned feature grid.
pub const FEATURE_RES: usize = 64;
pub const FEATURE_DIM: usize = 8;

/// Pre-activations written by edits and imports stay inside ±PRE_MAX so
/// gradients through the sigmoid never vanish completely.
const PRE_MAX: f32 = 12.0;

const ALBEDO: &str = "material.albedo";
const ROUGHNESS: &str = "material.roughness";

pub fn albedo_from_pre(x: f32) -> f32 {
    sigmoidf(x)
}

pub fn roughness_from_pre(x: f32) -> f32 {
    RHO_MIN as f32 + (1.0 - RHO_MIN as f32) * sigmoidf(x)
}

fn pre_of_unit(p: f32) -> f32 {
    let lo = sigmoidf(-PRE_MAX);
    logitf(p.clamp(lo, 1.0 - lo)).clamp(-PRE_MAX, PRE_MAX)
}

fn albedo_to_pre(a: f32) -> f32 {
    pre_of_unit(a.clamp(0.0, 1.0))
}

fn roughness_to_pre(r: f32) -> f32 {
    pre_of_unit((r.clamp(RHO_MIN as f32, 1.0) - RHO_MIN as f32) / (1.0 - RHO_MIN as f32))
}

/// Albedo (`R × R × 3`) and roughness (`R × R × 1`) UV maps.
#[derive(Clone, Debug)]
pub struct MaterialMaps {
    resolution: usize,
    pub params: ParamSet,
}

impl MaterialMaps {
    pub fn constant(resolution: usize, albedo: [f32; 3], roughness: f32) -> Result<Self> {
        let n = resolution * resolution;
        let a: Vec<f32> = (0..n).flat_map(|_| albedo).collect();
        Self::from_rasters(resolution, &a, &vec![roughness; n])
    }

    /// Maps holding the given activated values, clamped into range.
    pub fn from_rasters(resolution: usize, albedo: &[f32], roughness: &[f32]) -> Result<Self> {
        let n = resolution * resolution;
        if resolution == 0 || albedo.len() != 3 * n || roughness.len() != n {
            return Err(Error::shape(
                "MaterialMaps",
                format!("{} albedo and {} roughness values for {resolution}²", albedo.len(), roughness.len()),
            ));
        }
        if albedo.iter().chain(roughness).any(|v| !v.is_finite()) {
            return Err(Error::invalid("MaterialMaps", "non-finite material value"));
        }
        let mut params = ParamSet::new();
        let a = albedo.iter().map(|v| albedo_to_pre(*v)).collect();
        let r = roughness.iter().map(|v| roughness_to_pre(*v)).collect();
        params.add(ALBEDO, Tensor::new(&[resolution, resolution, 3], a)?);
        params.add(ROUGHNESS, Tensor::new(&[resolution, resolution, 1], r)?);
        Ok(Self { resolution, params })
    }

    /// Checkpointed pre-activations.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let find = |n: &'static str| params.find(n).ok_or(Error::Missing { what: "material map", id: n.into() });
        let (a, r) = (find(ALBEDO)?, find(ROUGHNESS)?);
        let res = params.get(a).shape().first().copied().unwrap_or(0);
        if params.get(a).shape() != [res, res, 3] || params.get(r).shape() != [res, res, 1] || res == 0 {
            return Err(Error::shape(
                "MaterialMaps",
                format!("albedo {:?}, roughness {:?}", params.get(a).shape(), params.get(r).shape()),
            ));
        }
        Ok(Self { resolution: res, params })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn albedo_id(&self) -> ParamId {
        self.params.find(ALBEDO).expect("albedo")
    }

    pub fn roughness_id(&self) -> ParamId {
        self.params.find(ROUGHNESS).expect("roughness")
    }

    pub fn albedo_pre(&self) -> &[f32] {
        self.params.get(self.albedo_id()).data()
    }

    pub fn roughness_pre(&self) -> &[f32] {
        self.params.get(self.roughness_id()).data()
    }

    /// Activated albedo, texel-major RGB.
    pub fn albedo(&self) -> Vec<f32> {
        self.albedo_pre().iter().map(|v| albedo_from_pre(*v)).collect()
    }

    pub fn roughness(&self) -> Vec<f32> {
        self.roughness_pre().iter().map(|v| roughness_from_pre(*v)).collect()
    }
}

/// Replacement values for the texels flagged in `mask`. Either raster may be
/// left out; values are clamped to the valid ranges.
#[derive(Clone, Copy, Debug)]
pub struct MaterialEdit<'a> {
    pub mask: &'a [bool],
    pub albedo: Option<&'a [f32]>,
    pub roughness: Option<&'a [f32]>,
}

/// A copy of `maps` with the masked texels overwritten. Unmasked texels keep
/// their exact pre-activations.
pub fn edit_materials(maps: &MaterialMaps, edit: &MaterialEdit) -> Result<MaterialMaps> {
    let n = maps.resolution * maps.resolution;
    let bad = edit.mask.len() != n
        || edit.albedo.is_some_and(|a| a.len() != 3 * n)
        || edit.roughness.is_some_and(|r| r.len() != n);
    if bad {
        return Err(Error::shape(
            "edit_materials",
            format!(
                "mask {}, albedo {:?}, roughness {:?} for {}² maps",
                edit.mask.len(),
                edit.albedo.map(<[f32]>::len),
                edit.roughness.map(<[f32]>::len),
                maps.resolution
            ),
        ));
    }
    let mut out = maps.clone();
    if let Some(a) = edit.albedo {
        let id = out.albedo_id();
        let pre = out.params.get_mut(id).data_mut();
        for k in (0..n).filter(|k| edit.mask[*k]) {
            for c in 0..3 {
                pre[3 * k + c] = albedo_to_pre(a[3 * k + c]);
            }
        }
    }
    if let Some(r) = edit.roughness {
        let id = out.roughness_id();
        let pre = out.params.get_mut(id).data_mut();
        for k in (0..n).filter(|k| edit.mask[*k]) {
            pre[k] = roughness_to_pre(r[k]);
        }
    }
    Ok(out)
}

const FEATURES: &str = "feature.grid";

/// Learned per-texel context for the UV-offset network.
#[derive(Clone, Debug)]
pub struct FeatureUVMap {
    pub params: ParamSet,
}

impl FeatureUVMap {
    pub fn new(resolution: usize, dim: usize, seed: u64) -> Result<Self> {
        if resolution < 2 || dim == 0 {
            return Err(Error::invalid("FeatureUVMap", "need at least 2² texels and one channel"));
        }
        let mut r = rng::stream(seed, 0xfea7);
        let mut params = ParamSet::new();
        let v = rng::normal_vec(&mut r, resolution * resolution * dim, 0.1);
        params.add(FEATURES, Tensor::new(&[resolution, resolution, dim], v)?);
        Ok(Self { params })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let id = params.find(FEATURES).ok_or(Error::Missing { what: "feature grid", id: FEATURES.into() })?;
        let s = params.get(id).shape();
        if s.len() != 3 || s[0] != s[1] || s[0] < 2 || s[2] == 0 {
            return Err(Error::shape("FeatureUVMap", format!("{s:?}")));
        }
        if !params.get(id).all_finite() {
            return Err(Error::invalid("FeatureUVMap", "non-finite features"));
        }
        Ok(Self { params })
    }

    pub(crate) fn id(&self) -> ParamId {
        self.params.find(FEATURES).expect("features")
    }

    pub fn resolution(&self) -> usize {
        self.params.get(self.id()).shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.params.get(self.id()).shape()[2]
    }
}

const NET_META: &str = "uvdelta.meta";

/// MLP from `[2u−1, 2v−1, h, ψ]` to a UV offset clamped to ±[`UV_DELTA_MAX`].
/// The last layer starts at zero, so a fresh or frozen net emits exactly 0.
#[derive(Clone, Debug)]
pub struct UVDeltaNet {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub params: ParamSet,
}

impl UVDeltaNet {
    pub fn new(hidden: &[usize], feature_dim: usize, seed: u64) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("UVDeltaNet", "need at least one non-empty hidden layer"));
        }
        let mut params = ParamSet::new();
        let meta: Vec<f32> = core::iter::once(feature_dim as f32).chain(hidden.iter().map(|h| *h as f32)).collect();
        let m = params.add(NET_META, Tensor::from_vec(meta));
        params.get_mut(m).set_requires_grad(false);
        let mut r = rng::stream(seed, 0x0de1);
        let mut fan_in = 3 + feature_dim;
        for l in 0..=hidden.len() {
            let last = l == hidden.len();
            let out = if last { 2 } else { hidden[l] };
            let w = if last {
                vec![0.0; fan_in * out]
            } else {
                rng::normal_vec(&mut r, fan_in * out, crate::math::sqrt(2.0 / fan_in as f64) as f32)
            };
            params.add(&format!("uvdelta.w{l}"), Tensor::new(&[fan_in, out], w)?);
            params.add(&format!("uvdelta.b{l}"), Tensor::from_vec(vec![0.0; out]));
            fan_in = out;
        }
        Ok(Self { hidden: hidden.to_vec(), feature_dim, params })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let meta = params
            .find(NET_META)
            .map(|m| params.get(m).data().to_vec())
            .ok_or(Error::Missing { what: "network meta", id: NET_META.into() })?;
        let (&fd, hid) = meta.split_first().ok_or(Error::invalid("UVDeltaNet", "empty meta"))?;
        let hidden: Vec<usize> = hid.iter().map(|h| *h as usize).collect();
        let mut fan_in = 3 + fd as usize;
        for l in 0..=hidden.len() {
            let out = hidden.get(l).copied().unwrap_or(2);
            let (w, b) = (params.find(&format!("uvdelta.w{l}")), params.find(&format!("uvdelta.b{l}")));
            let (Some(w), Some(b)) = (w, b) else {
                return Err(Error::Missing { what: "network layer", id: format!("uvdelta layer {l}") });
            };
            if params.get(w).shape() != [fan_in, out] || params.get(b).shape() != [out] {
                return Err(Error::shape("UVDeltaNet", format!("layer {l}")));
            }
            fan_in = out;
        }
        Ok(Self { hidden, feature_dim: fd as usize, params })
    }

    pub fn input_width(&self) -> usize {
        3 + self.feature_dim
    }

    /// Toggles the layer tensors; the meta record is never trained.
    pub fn set_trainable(&mut self, on: bool) {
        self.params.set_trainable("uvdelta.w", on);
        self.params.set_trainable("uvdelta.b", on);
    }

    /// Records the clamped offsets `[S, 2]` for inputs `x` (`[S, 3 + F]`).
    /// `vars` holds one handle per parameter, in parameter-set order.
    pub(crate) fn record(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..=self.hidden.len() {
            let w = vars[self.params.find(&format!("uvdelta.w{l}")).expect("layer").0];
            let b = vars[self.params.find(&format!("uvdelta.b{l}")).expect("layer").0];
            let m = g.matmul(h, w)?;
            h = g.add_bias(m, b)?;
            if l < self.hidden.len() {
                h = g.relu(h);
            }
        }
        Ok(g.clamp(h, -UV_DELTA_MAX, UV_DELTA_MAX))
    }
}

/// Graph handles for every parameter of a set, in set order.
pub(crate) fn param_vars(g: &mut Graph, set: &ParamSet) -> Vec<Var> {
    (0..set.len()).map(|i| g.param(set, ParamId(i))).collect()
}
