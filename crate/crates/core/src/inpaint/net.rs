use alloc::vec;
use alloc::vec::Vec;

use super::{morph_inpaint, DenseUVMap};
use crate::autodiff::{upsample_mask, Graph, ParamId, ParamSet, Tensor, TexelSupport, Var};
use crate::math::{logitf, sqrt, Vec3};
use crate::{rng, Error, Result};

const META: &str = "inpaint.meta";
/// Morphological visibility is clamped to `[ε, 1 − ε]` before its logit.
const VIS_EPS: f32 = 1e-3;
/// Visibility input planes: sparse υ, region-growing υ, sparsity mask,
/// normal, direction, n·d.
const VIS_IN: usize = 10;
/// Directions per forward chunk at inference.
const VIS_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InpaintKind {
    /// Sparse normals, the region-growing fill, the sparsity mask and the
    /// texel's atlas position in; dense unit normals out.
    Normal,
    /// Run once per light direction with shared weights: sparse and
    /// region-grown υ for that direction, the sparsity mask, the dense
    /// normal, the direction and their cosine in; dense υ out.
    Visibility,
}

impl InpaintKind {
    pub fn in_channels(self) -> usize {
        match self {
            InpaintKind::Normal => 9,
            InpaintKind::Visibility => VIS_IN,
        }
    }

    pub fn out_channels(self) -> usize {
        match self {
            InpaintKind::Normal => 3,
            InpaintKind::Visibility => 1,
        }
    }

    fn code(self) -> f32 {
        match self {
            InpaintKind::Normal => 1.0,
            InpaintKind::Visibility => 2.0,
        }
    }
}

/// Layer stack of a partial-convolution inpainting net. Layer `i` maps to
/// `widths[i]` channels with a `kernels[i]` square kernel at `strides[i]`;
/// `upsample_after[i]` applies a ×2 depth-to-space, dividing the width by 4.
#[derive(Clone, Debug, PartialEq)]
pub struct InpaintNetConfig {
    pub kind: InpaintKind,
    pub widths: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub upsample_after: Vec<bool>,
    /// Rounds of the region-growing baseline the net corrects.
    pub morph_iterations: usize,
}

impl InpaintNetConfig {
    /// Eight 3×3 layers of constant `width`.
    pub fn normal_net(width: usize) -> Self {
        let mut widths = vec![width; 7];
        widths.push(3);
        Self {
            kind: InpaintKind::Normal,
            widths,
            kernels: vec![3; 8],
            strides: vec![1; 8],
            upsample_after: vec![false; 8],
            morph_iterations: 1 << 20,
        }
    }

    /// Eight 3×3 layers with one stride-2 layer and one depth-to-space ×2.
    pub fn visibility_net(width: usize) -> Self {
        let mut widths = vec![width; 8];
        widths[5] = 4 * width;
        widths[7] = 1;
        let mut strides = vec![1; 8];
        strides[1] = 2;
        let mut upsample_after = vec![false; 8];
        upsample_after[5] = true;
        Self { kind: InpaintKind::Visibility, widths, kernels: vec![3; 8], strides, upsample_after, morph_iterations: 1 << 20 }
    }

    pub fn default_for(kind: InpaintKind) -> Self {
        match kind {
            InpaintKind::Normal => Self::normal_net(32),
            InpaintKind::Visibility => Self::visibility_net(64),
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn in_channels(&self) -> usize {
        self.kind.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.kind.out_channels()
    }

    /// Map sides must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        let (mut d, mut worst) = (0u32, 0u32);
        for (s, u) in self.strides.iter().zip(&self.upsample_after) {
            if *s == 2 {
                d += 1;
                worst = worst.max(d);
            }
            if *u {
                d = d.saturating_sub(1);
            }
        }
        1 << worst
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layers();
        if l == 0 || self.kernels.len() != l || self.strides.len() != l || self.upsample_after.len() != l {
            return Err(Error::invalid("InpaintNetConfig", "per-layer lists must be non-empty and of equal length"));
        }
        if self.widths.iter().any(|w| *w == 0) || self.widths[l - 1] != self.out_channels() {
            return Err(Error::invalid(
                "InpaintNetConfig",
                alloc::format!("widths must be positive and end with {} output channels", self.out_channels()),
            ));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) || self.strides.iter().any(|s| *s != 1 && *s != 2) {
            return Err(Error::invalid("InpaintNetConfig", "kernels must be odd and strides 1 or 2"));
        }
        let mut down = 0i32;
        for i in 0..l {
            if self.strides[i] == 2 {
                down += 1;
            }
            if self.upsample_after[i] {
                if i == l - 1 || self.widths[i] % 4 != 0 {
                    return Err(Error::invalid("InpaintNetConfig", "depth-to-space needs a non-final layer with width divisible by 4"));
                }
                down -= 1;
                if down < 0 {
                    return Err(Error::invalid("InpaintNetConfig", "upsampling above input resolution"));
                }
            }
        }
        if down != 0 {
            return Err(Error::invalid("InpaintNetConfig", "output resolution differs from input"));
        }
        Ok(())
    }

    fn meta(&self) -> Vec<f32> {
        let mut m = vec![self.kind.code(), self.layers() as f32, self.morph_iterations as f32];
        for i in 0..self.layers() {
            m.extend([self.widths[i] as f32, self.kernels[i] as f32, self.strides[i] as f32, f32::from(u8::from(self.upsample_after[i]))]);
        }
        m
    }

    fn from_meta(m: &[f32]) -> Result<Self> {
        let bad = || Error::invalid("TrainedInpainter", "bad meta tensor");
        if m.len() < 3 {
            return Err(bad());
        }
        let kind = match m[0] as u32 {
            1 => InpaintKind::Normal,
            2 => InpaintKind::Visibility,
            _ => return Err(bad()),
        };
        let l = m[1] as usize;
        if m.len() != 3 + 4 * l {
            return Err(bad());
        }
        let col = |j: usize| (0..l).map(|i| m[3 + 4 * i + j] as usize).collect::<Vec<_>>();
        let c = Self {
            kind,
            widths: col(0),
            kernels: col(1),
            strides: col(2),
            upsample_after: col(3).into_iter().map(|u| u != 0).collect(),
            morph_iterations: m[2] as usize,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Network parameters with the configuration they were built for.
#[derive(Clone, Debug)]
pub struct TrainedInpainter {
    pub config: InpaintNetConfig,
    pub params: ParamSet,
}

/// Recorded forward pass: the residual before chart masking, and the
/// partial-convolution mask after every layer (at input resolution).
pub(crate) struct NetTrace {
    pub delta: Var,
    #[cfg_attr(not(test), allow(dead_code))]
    pub masks: Vec<Vec<f32>>,
}

impl TrainedInpainter {
    /// He-initialized hidden layers and an all-zero last layer, so a fresh
    /// net returns the region-growing baseline unchanged.
    pub fn new(config: InpaintNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let meta = params.add(META, Tensor::from_vec(config.meta()));
        params.get_mut(meta).set_requires_grad(false);
        let mut r = rng::stream(seed, 0x1a9a);
        let mut cin = config.in_channels();
        for i in 0..config.layers() {
            let (o, k) = (config.widths[i], config.kernels[i]);
            let last = i + 1 == config.layers();
            let std = sqrt(2.0 / (cin * k * k) as f64) as f32;
            let w = if last { vec![0.0; o * cin * k * k] } else { rng::normal_vec(&mut r, o * cin * k * k, std) };
            params.add(&alloc::format!("inpaint.w{i}"), Tensor::new(&[o, cin, k, k], w)?);
            params.add(&alloc::format!("inpaint.b{i}"), Tensor::from_vec(vec![0.0; o]));
            cin = if config.upsample_after[i] { o / 4 } else { o };
        }
        Ok(Self { config, params })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let meta = params.find(META).ok_or(Error::Missing { what: "inpaint meta tensor", id: alloc::string::String::from(META) })?;
        let config = InpaintNetConfig::from_meta(params.get(meta).data())?;
        for i in 0..config.layers() {
            for p in ["w", "b"] {
                if params.find(&alloc::format!("inpaint.{p}{i}")).is_none() {
                    return Err(Error::Missing { what: "inpaint layer", id: alloc::format!("{p}{i}") });
                }
            }
        }
        Ok(Self { config, params })
    }

    fn layer(&self, i: usize) -> (ParamId, ParamId) {
        let w = self.params.find(&alloc::format!("inpaint.w{i}")).expect("layer weights");
        let b = self.params.find(&alloc::format!("inpaint.b{i}")).expect("layer bias");
        (w, b)
    }

    /// `x` is `[N, C_in, H, W]`, `mask` its `[N, 1, H, W]` validity.
    pub(crate) fn record(&self, g: &mut Graph, vars: &[Var], x: Var, mask: &[f32]) -> Result<NetTrace> {
        let s = g.shape(x).to_vec();
        let n = s[0];
        let mut cur = x;
        let mut m = mask.to_vec();
        let mut scale = 1usize;
        let mut masks = Vec::with_capacity(self.config.layers());
        let last = self.config.layers() - 1;
        for i in 0..=last {
            let (w, b) = self.layer(i);
            let (k, stride) = (self.config.kernels[i], self.config.strides[i]);
            let out = g.partial_conv2d(cur, &m, vars[w.0], Some(vars[b.0]), stride, k / 2)?;
            cur = out.value;
            m = out.mask;
            scale *= stride;
            if self.config.upsample_after[i] {
                let hw = g.shape(cur).to_vec();
                cur = g.depth_to_space(cur, 2)?;
                m = upsample_mask(&m, n, hw[2], hw[3], 2);
                scale /= 2;
            }
            if i < last {
                cur = g.relu(cur);
            }
            let hw = g.shape(cur).to_vec();
            masks.push(upsample_mask(&m, n, hw[2], hw[3], scale));
        }
        Ok(NetTrace { delta: cur, masks })
    }

    pub(crate) fn const_vars(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(_, _, t)| g.constant(t.clone())).collect()
    }

    pub(crate) fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape("inpaint_forward", alloc::format!("map {h}x{w} must be a multiple of {m}")));
        }
        Ok(())
    }
}

/// Texel-major `[H·W, C]` values (valid texels only) to `[1, C, H, W]`.
pub(crate) fn to_nchw(m: &DenseUVMap) -> Vec<f32> {
    let (hw, c) = (m.len(), m.channels);
    let mut out = vec![0.0f32; c * hw];
    for k in 0..hw {
        if m.valid[k] {
            for ch in 0..c {
                out[ch * hw + k] = m.values[k * c + ch];
            }
        }
    }
    out
}

pub(crate) fn mask_of(valid: &[bool]) -> Vec<f32> {
    valid.iter().map(|v| f32::from(u8::from(*v))).collect()
}

/// Records the normal net: `morph + Δ` on texels the baseline covers.
/// Convolutions run over the baseline's coverage, so the hole interiors see
/// the fill and chart borders stay sharp. Returns the un-normalized
/// `[1, 3, H, W]` prediction.
pub(crate) fn normal_pass(
    net: &TrainedInpainter,
    g: &mut Graph,
    vars: &[Var],
    sparse: &DenseUVMap,
    base: &DenseUVMap,
) -> Result<(Var, NetTrace)> {
    let (h, w) = (sparse.height, sparse.width);
    let hw = h * w;
    let mut x = to_nchw(sparse);
    x.extend(to_nchw(base));
    x.extend(mask_of(&sparse.valid));
    x.extend((0..hw).map(|k| 2.0 * ((k % w) as f32 + 0.5) / w as f32 - 1.0));
    x.extend((0..hw).map(|k| 2.0 * ((k / w) as f32 + 0.5) / h as f32 - 1.0));
    let xv = g.constant(Tensor::new(&[1, 9, h, w], x)?);
    let cover = mask_of(&base.valid);
    let trace = net.record(g, vars, xv, &cover)?;
    let cover3: Vec<f32> = (0..3).flat_map(|_| cover.iter().copied()).collect();
    let d = g.mul_const(trace.delta, &cover3)?;
    let b = g.constant(Tensor::new(&[1, 3, h, w], to_nchw(base))?);
    Ok((g.add(b, d)?, trace))
}

/// Records the visibility net for the directions in `subset`, one batch
/// entry each. Returns `[S, 1, H, W]` visibility in `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn visibility_pass(
    net: &TrainedInpainter,
    g: &mut Graph,
    vars: &[Var],
    sparse: &DenseUVMap,
    base: &DenseUVMap,
    normals: &DenseUVMap,
    directions: &[Vec3],
    subset: &[usize],
) -> Result<(Var, NetTrace)> {
    let (h, w) = (sparse.height, sparse.width);
    let (hw, d, s) = (h * w, sparse.channels, subset.len());
    let mut x = vec![0.0f32; s * VIS_IN * hw];
    let mut logits = vec![0.0f32; s * hw];
    let mut cover = vec![0.0f32; s * hw];
    for (si, &di) in subset.iter().enumerate() {
        let dir = directions[di].to_f32();
        let plane = &mut x[si * VIS_IN * hw..(si + 1) * VIS_IN * hw];
        for k in 0..hw {
            let n: [f32; 3] = if normals.valid[k] { core::array::from_fn(|c| normals.values[k * 3 + c]) } else { [0.0; 3] };
            if sparse.valid[k] {
                plane[k] = sparse.values[k * d + di];
                plane[2 * hw + k] = 1.0;
            }
            for c in 0..3 {
                plane[(3 + c) * hw + k] = n[c];
                plane[(6 + c) * hw + k] = dir[c];
            }
            plane[9 * hw + k] = n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2];
            if base.valid[k] {
                let v = base.values[k * d + di];
                plane[hw + k] = v;
                logits[si * hw + k] = logitf(v.clamp(VIS_EPS, 1.0 - VIS_EPS));
                cover[si * hw + k] = 1.0;
            }
        }
    }
    let xv = g.constant(Tensor::new(&[s, VIS_IN, h, w], x)?);
    let trace = net.record(g, vars, xv, &cover)?;
    let dm = g.mul_const(trace.delta, &cover)?;
    let b = g.constant(Tensor::new(&[s, 1, h, w], logits)?);
    let z = g.add(b, dm)?;
    Ok((g.sigmoid(z), trace))
}

/// Inputs of one inpainting forward pass.
#[derive(Clone, Copy, Debug)]
pub enum InpaintInputs<'a> {
    Normals { sparse: &'a DenseUVMap },
    /// `sparse` has one channel per direction; `normals` is a dense map.
    Visibility { sparse: &'a DenseUVMap, normals: &'a DenseUVMap, directions: &'a [Vec3] },
}

pub(crate) fn check_inputs(net: &TrainedInpainter, inputs: &InpaintInputs, support: &TexelSupport) -> Result<()> {
    let op = "inpaint_forward";
    match (net.config.kind, inputs) {
        (InpaintKind::Normal, InpaintInputs::Normals { sparse }) => {
            if sparse.channels != 3 {
                return Err(Error::shape(op, alloc::format!("normal map with {} channels", sparse.channels)));
            }
            sparse.check_support(op, support)?;
            net.check_dims(sparse.height, sparse.width)
        }
        (InpaintKind::Visibility, InpaintInputs::Visibility { sparse, normals, directions }) => {
            if sparse.channels != directions.len() || directions.is_empty() || normals.channels != 3 {
                return Err(Error::shape(
                    op,
                    alloc::format!("{} visibility channels, {} directions, {} normal channels", sparse.channels, directions.len(), normals.channels),
                ));
            }
            if normals.height != sparse.height || normals.width != sparse.width {
                return Err(Error::shape(op, "normal and visibility maps differ in size"));
            }
            sparse.check_support(op, support)?;
            net.check_dims(sparse.height, sparse.width)
        }
        _ => Err(Error::invalid(op, "inputs do not match the network kind")),
    }
}

/// Dense map from sparse inputs. Output validity is the region-growing
/// coverage (every texel of a chart with at least one sample). Normals are
/// unit length wherever nonzero; visibility lies in `[0, 1]`.
pub fn inpaint_forward(net: &TrainedInpainter, inputs: InpaintInputs, support: &TexelSupport) -> Result<DenseUVMap> {
    check_inputs(net, &inputs, support)?;
    let iters = net.config.morph_iterations;
    match inputs {
        InpaintInputs::Normals { sparse } => {
            let base = morph_inpaint(sparse, support, iters, true)?.map;
            let mut g = Graph::new();
            let vars = net.const_vars(&mut g);
            let (pred, _) = normal_pass(net, &mut g, &vars, sparse, &base)?;
            let p = g.data(pred);
            let hw = sparse.len();
            let mut out = DenseUVMap::new(sparse.height, sparse.width, 3)?;
            for k in 0..hw {
                if !base.valid[k] {
                    continue;
                }
                let v = [p[k], p[hw + k], p[2 * hw + k]];
                let len = sqrt(v.iter().map(|x| (*x as f64) * (*x as f64)).sum());
                let s = if len > 1e-12 { 1.0 / len } else { 1.0 };
                for c in 0..3 {
                    out.values[k * 3 + c] = (v[c] as f64 * s) as f32;
                }
                out.valid[k] = true;
            }
            Ok(out)
        }
        InpaintInputs::Visibility { sparse, normals, directions } => {
            let base = morph_inpaint(sparse, support, iters, false)?.map;
            let (hw, d) = (sparse.len(), directions.len());
            let mut out = DenseUVMap::new(sparse.height, sparse.width, d)?;
            out.valid.copy_from_slice(&base.valid);
            let all: Vec<usize> = (0..d).collect();
            for chunk in all.chunks(VIS_CHUNK) {
                let mut g = Graph::new();
                let vars = net.const_vars(&mut g);
                let (pred, _) = visibility_pass(net, &mut g, &vars, sparse, &base, normals, directions, chunk)?;
                let p = g.data(pred);
                for (si, &di) in chunk.iter().enumerate() {
                    for k in 0..hw {
                        if base.valid[k] {
                            out.values[k * d + di] = p[si * hw + k];
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}
