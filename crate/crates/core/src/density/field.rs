//! Density representations: an exact analytic field, a trilinear voxel grid
//! and a coordinate MLP.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::math::{exp, sigmoidf, Vec3};
use crate::rng;
use crate::{Error, Result};

/// A point inside the shell in every coordinate system the fields use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldPoint {
    /// Rest-pose position, metres.
    pub rest: Vec3,
    /// Rest position normalized to `[−1, 1]³`.
    pub canonical: Vec3,
    /// `(u, v, h / half_width)`.
    pub local: [f64; 3],
}

/// Packed batch of field inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub canonical: Vec<[f32; 3]>,
    pub local: Vec<[f32; 3]>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    pub fn push(&mut self, p: &FieldPoint) {
        self.canonical.push(p.canonical.to_f32());
        self.local.push([p.local[0] as f32, p.local[1] as f32, p.local[2] as f32]);
    }
}

/// Graph handles for one batch: activated density `[S]`, pre-activation
/// `[S]` and color `[S, 3]`.
#[derive(Clone, Copy, Debug)]
pub struct FieldVars {
    pub sigma: Var,
    pub sigma_pre: Var,
    pub color: Var,
}

pub type SdfFn = Arc<dyn Fn(Vec3) -> f64 + Send + Sync>;

/// `σ = s·sigmoid(−s·sdf)` with pre-activation `σ′ = −s·sdf`.
#[derive(Clone)]
pub struct AnalyticField {
    pub sdf: SdfFn,
    pub sharpness: f64,
    pub color: [f64; 3],
}

impl core::fmt::Debug for AnalyticField {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("AnalyticField").field("sharpness", &self.sharpness).field("color", &self.color).finish()
    }
}

impl AnalyticField {
    pub fn new(sdf: SdfFn, sharpness: f64, color: [f64; 3]) -> Result<Self> {
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(Error::invalid("AnalyticField", "sharpness must be positive"));
        }
        Ok(Self { sdf, sharpness, color })
    }

    /// A sphere of radius `r` at `c`.
    pub fn sphere(c: Vec3, r: f64, sharpness: f64, color: [f64; 3]) -> Result<Self> {
        Self::new(Arc::new(move |p: Vec3| (p - c).norm() - r), sharpness, color)
    }

    pub fn sigma_pre_at(&self, p: Vec3) -> f64 {
        -self.sharpness * (self.sdf)(p)
    }

    pub fn sigma_at(&self, p: Vec3) -> f64 {
        let x = self.sigma_pre_at(p);
        self.sharpness * sigmoid(x)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

const META: &str = "density.meta";
const KIND_VOXEL: f32 = 1.0;
const KIND_MLP: f32 = 2.0;

/// Pre-activation values on a node grid spanning the canonical cube, with
/// `σ = density_scale·ReLU(σ′)` and `color = sigmoid(color_scale·c′)`.
///
/// The scales set how far one optimizer step moves density and color.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub density_scale: f64,
    pub color_scale: f64,
    pub params: ParamSet,
    sigma_id: ParamId,
    color_id: ParamId,
}

impl VoxelGrid {
    pub const DEFAULT_DENSITY_SCALE: f64 = 500.0;
    pub const DEFAULT_COLOR_SCALE: f64 = 10.0;

    /// Grid with a small uniform density and mid-gray color.
    pub fn new(dims: [usize; 3], density_scale: f64, color_scale: f64) -> Result<Self> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if dims.iter().any(|&d| d < 2) || !pos(density_scale) || !pos(color_scale) {
            return Err(Error::invalid("VoxelGrid", "needs at least 2 nodes per axis and positive scales"));
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut params = ParamSet::new();
        let meta = [KIND_VOXEL, dims[0] as f32, dims[1] as f32, dims[2] as f32, density_scale as f32, color_scale as f32];
        let m = params.add(META, Tensor::from_vec(meta.to_vec()));
        params.get_mut(m).set_requires_grad(false);
        let sigma_id = params.add("density.sigma", Tensor::full(&[n, 1], 0.01));
        let color_id = params.add("density.color", Tensor::zeros(&[n, 3]));
        Ok(Self { dims, density_scale, color_scale, params, sigma_id, color_id })
    }

    /// Node counts for a canonical box of metric size `extent` at roughly
    /// `spacing` metres per cell.
    pub fn dims_for(extent: Vec3, spacing: f64) -> [usize; 3] {
        let f = |e: f64| (libm::ceil(e / spacing) as usize + 1).max(2);
        [f(extent.x), f(extent.y), f(extent.z)]
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let c = |i: usize, n: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        Vec3::new(c(i, self.dims[0]), c(j, self.dims[1]), c(k, self.dims[2]))
    }

    /// Sets `σ′` from a signed distance in metres (given at canonical
    /// positions): `σ′ = s·sigmoid(−s·sdf)/scale − offset`.
    pub fn init_from_sdf(&mut self, sdf: impl Fn(Vec3) -> f64, sharpness: f64, offset: f64) {
        let [nx, ny, nz] = self.dims;
        let mut vals = vec![0.0f32; self.len()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let d = sdf(self.node_position(i, j, k));
                    let s = sharpness * sigmoid(-sharpness * d) / self.density_scale - offset;
                    vals[self.node_index(i, j, k)] = s as f32;
                }
            }
        }
        self.params.get_mut(self.sigma_id).data_mut().copy_from_slice(&vals);
    }

    /// Eight node indices and trilinear weights; coordinates are clamped to
    /// the cube.
    pub fn trilinear(&self, c: [f32; 3]) -> ([u32; 8], [f32; 8]) {
        let mut i0 = [0usize; 3];
        let mut fr = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let x = ((c[a] as f64).clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64;
            let i = (libm::floor(x) as usize).min(n - 2);
            i0[a] = i;
            fr[a] = x - i as f64;
        }
        let mut idx = [0u32; 8];
        let mut w = [0.0f32; 8];
        for t in 0..8 {
            let (di, dj, dk) = (t & 1, (t >> 1) & 1, (t >> 2) & 1);
            idx[t] = self.node_index(i0[0] + di, i0[1] + dj, i0[2] + dk) as u32;
            let f = |d: usize, a: usize| if d == 1 { fr[a] } else { 1.0 - fr[a] };
            w[t] = (f(di, 0) * f(dj, 1) * f(dk, 2)) as f32;
        }
        (idx, w)
    }

    fn lookup(&self, id: ParamId, ch: usize, c: [f32; 3]) -> Vec<f64> {
        let (idx, w) = self.trilinear(c);
        let d = self.params.get(id).data();
        let mut out = vec![0.0; ch];
        for t in 0..8 {
            for (k, o) in out.iter_mut().enumerate() {
                *o += w[t] as f64 * d[idx[t] as usize * ch + k] as f64;
            }
        }
        out
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let meta = params.find(META).map(|m| params.get(m).data().to_vec());
        let (sigma_id, color_id) = match (params.find("density.sigma"), params.find("density.color")) {
            (Some(s), Some(c)) => (s, c),
            _ => return Err(Error::Missing { what: "voxel grid tensors", id: "density".into() }),
        };
        match meta.as_deref() {
            Some([k, nx, ny, nz, s, cs]) if *k == KIND_VOXEL => {
                let dims = [*nx as usize, *ny as usize, *nz as usize];
                let n = dims[0] * dims[1] * dims[2];
                if params.get(sigma_id).shape() != [n, 1] || params.get(color_id).shape() != [n, 3] {
                    return Err(Error::shape("VoxelGrid", "tensor sizes disagree with dims"));
                }
                Ok(Self { dims, density_scale: *s as f64, color_scale: *cs as f64, params, sigma_id, color_id })
            }
            _ => Err(Error::invalid("VoxelGrid", "bad or missing meta tensor")),
        }
    }
}

/// Coordinate network over `PE(canonical) ⊕ (u, v, h)` with a four-wide head
/// `(σ′, c′)`.
#[derive(Clone, Debug)]
pub struct DensityMlp {
    pub freqs: usize,
    pub hidden: usize,
    pub layers: usize,
    pub density_scale: f64,
    pub params: ParamSet,
}

impl DensityMlp {
    pub fn new(freqs: usize, hidden: usize, layers: usize, density_scale: f64, seed: u64) -> Result<Self> {
        if layers == 0 || hidden == 0 || !(density_scale > 0.0) {
            return Err(Error::invalid("DensityMlp", "needs layers, width and a positive scale"));
        }
        let mut params = ParamSet::new();
        let meta = [KIND_MLP, freqs as f32, hidden as f32, layers as f32, density_scale as f32];
        let m = params.add(META, Tensor::from_vec(meta.to_vec()));
        params.get_mut(m).set_requires_grad(false);
        let mut r = rng::stream(seed, 0x4d4c50);
        let mut fan_in = Self::input_width(freqs);
        for l in 0..=layers {
            let out = if l == layers { 4 } else { hidden };
            let std = crate::math::sqrt(2.0 / (fan_in + out) as f64) as f32;
            let w = rng::normal_vec(&mut r, fan_in * out, std);
            params.add(&alloc::format!("density.mlp.w{l}"), Tensor::new(&[fan_in, out], w)?);
            let mut b = vec![0.0f32; out];
            if l == layers {
                b[0] = 0.01;
            }
            params.add(&alloc::format!("density.mlp.b{l}"), Tensor::from_vec(b));
            fan_in = out;
        }
        Ok(Self { freqs, hidden, layers, density_scale, params })
    }

    pub fn input_width(freqs: usize) -> usize {
        3 * (1 + 2 * freqs) + 3
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let meta = params.find(META).map(|m| params.get(m).data().to_vec());
        match meta.as_deref() {
            Some([k, f, h, l, s]) if *k == KIND_MLP => {
                let (freqs, hidden, layers) = (*f as usize, *h as usize, *l as usize);
                for l in 0..=layers {
                    if params.find(&alloc::format!("density.mlp.w{l}")).is_none() {
                        return Err(Error::Missing { what: "mlp layer", id: alloc::format!("{l}") });
                    }
                }
                Ok(Self { freqs, hidden, layers, density_scale: *s as f64, params })
            }
            _ => Err(Error::invalid("DensityMlp", "bad or missing meta tensor")),
        }
    }

    /// Records the network on `g`, returning the `[S, 4]` head output.
    /// `vars` holds one handle per parameter, in parameter-set order.
    fn head(&self, g: &mut Graph, vars: &[Var], batch: &SampleBatch) -> Result<Var> {
        let n = batch.len();
        let canon: Vec<f32> = batch.canonical.iter().flatten().copied().collect();
        let local: Vec<f32> = batch.local.iter().flatten().copied().collect();
        let c = g.constant(Tensor::new(&[n, 3], canon)?);
        let l = g.constant(Tensor::new(&[n, 3], local)?);
        let pe = g.positional_encoding(c, self.freqs)?;
        let mut h = g.concat(&[pe, l], 1)?;
        for k in 0..=self.layers {
            let w = self.params.find(&alloc::format!("density.mlp.w{k}")).expect("layer");
            let b = self.params.find(&alloc::format!("density.mlp.b{k}")).expect("layer");
            let (w, b) = (vars[w.0], vars[b.0]);
            let m = g.matmul(h, w)?;
            h = g.add_bias(m, b)?;
            if k < self.layers {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// A trainable or exact density field over canonical coordinates.
#[derive(Clone, Debug)]
pub enum DensityField {
    /// Exact field over rest-pose positions.
    Analytic(AnalyticField),
    Voxel(VoxelGrid),
    Mlp(DensityMlp),
}

impl DensityField {
    pub fn params(&self) -> Option<&ParamSet> {
        match self {
            DensityField::Analytic(_) => None,
            DensityField::Voxel(v) => Some(&v.params),
            DensityField::Mlp(m) => Some(&m.params),
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamSet> {
        match self {
            DensityField::Analytic(_) => None,
            DensityField::Voxel(v) => Some(&mut v.params),
            DensityField::Mlp(m) => Some(&mut m.params),
        }
    }

    /// Rebuilds a voxel or MLP field from checkpointed parameters.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let kind = params.find(META).map(|m| params.get(m).data().first().copied());
        match kind {
            Some(Some(k)) if k == KIND_VOXEL => Ok(DensityField::Voxel(VoxelGrid::from_params(params)?)),
            Some(Some(k)) if k == KIND_MLP => Ok(DensityField::Mlp(DensityMlp::from_params(params)?)),
            _ => Err(Error::invalid("DensityField", "unknown parameter layout")),
        }
    }

    /// `(σ′, σ, color)` at one point.
    pub fn eval(&self, p: &FieldPoint) -> (f64, f64, [f64; 3]) {
        match self {
            DensityField::Analytic(a) => {
                let s = a.sigma_pre_at(p.rest);
                (s, a.sharpness * sigmoid(s), a.color)
            }
            DensityField::Voxel(v) => {
                let c = p.canonical.to_f32();
                let s = v.lookup(v.sigma_id, 1, c)[0];
                let col = v.lookup(v.color_id, 3, c);
                let col = [0, 1, 2].map(|k| sigmoidf((v.color_scale * col[k]) as f32) as f64);
                (s, v.density_scale * s.max(0.0), col)
            }
            DensityField::Mlp(m) => {
                let mut b = SampleBatch::default();
                b.push(p);
                let mut g = Graph::new();
                let vars = param_vars(&mut g, &m.params);
                let h = m.head(&mut g, &vars, &b).expect("mlp shapes");
                let d = g.data(h);
                let s = d[0] as f64;
                (s, m.density_scale * s.max(0.0), [1, 2, 3].map(|k| sigmoidf(d[k]) as f64))
            }
        }
    }

    pub fn sigma(&self, p: &FieldPoint) -> f64 {
        self.eval(p).1
    }

    /// Records the field over a batch.
    pub fn forward(&self, g: &mut Graph, batch: &SampleBatch) -> Result<FieldVars> {
        let vars = match self.params() {
            Some(p) => param_vars(g, p),
            None => Vec::new(),
        };
        self.forward_with(g, &vars, batch)
    }

    /// [`DensityField::forward`] with caller-supplied parameter handles, one
    /// per parameter in parameter-set order.
    pub fn forward_with(&self, g: &mut Graph, vars: &[Var], batch: &SampleBatch) -> Result<FieldVars> {
        if self.params().is_some_and(|p| p.len() != vars.len()) {
            return Err(Error::shape("DensityField::forward", "one handle per parameter expected"));
        }
        if batch.local.len() != batch.canonical.len() {
            return Err(Error::shape("DensityField::forward", "canonical and local lengths differ"));
        }
        match self {
            DensityField::Analytic(_) => Err(Error::invalid("DensityField::forward", "analytic field has no parameters")),
            DensityField::Voxel(v) => {
                let n = batch.len();
                let mut idx = Vec::with_capacity(n * 8);
                let mut w = Vec::with_capacity(n * 8);
                for c in &batch.canonical {
                    let (i, ww) = v.trilinear(*c);
                    idx.extend_from_slice(&i);
                    w.extend_from_slice(&ww);
                }
                let (sp, cp) = (vars[v.sigma_id.0], vars[v.color_id.0]);
                let pre = g.gather_weighted(sp, &idx, &w, 8)?;
                let pre = g.reshape(pre, &[n])?;
                let r = g.relu(pre);
                let sigma = g.scale(r, v.density_scale as f32);
                let cpre = g.gather_weighted(cp, &idx, &w, 8)?;
                let cpre = g.scale(cpre, v.color_scale as f32);
                let color = g.sigmoid(cpre);
                Ok(FieldVars { sigma, sigma_pre: pre, color })
            }
            DensityField::Mlp(m) => {
                let n = batch.len();
                let h = m.head(g, vars, batch)?;
                // split the head with constant selection matrices
                let mut s_sel = vec![0.0f32; 4];
                s_sel[0] = 1.0;
                let mut c_sel = vec![0.0f32; 12];
                for k in 0..3 {
                    c_sel[(k + 1) * 3 + k] = 1.0;
                }
                let ss = g.constant(Tensor::new(&[4, 1], s_sel)?);
                let cs = g.constant(Tensor::new(&[4, 3], c_sel)?);
                let pre = g.matmul(h, ss)?;
                let pre = g.reshape(pre, &[n])?;
                let r = g.relu(pre);
                let sigma = g.scale(r, m.density_scale as f32);
                let cpre = g.matmul(h, cs)?;
                let color = g.sigmoid(cpre);
                Ok(FieldVars { sigma, sigma_pre: pre, color })
            }
        }
    }
}

fn param_vars(g: &mut Graph, set: &ParamSet) -> Vec<Var> {
    (0..set.len()).map(|i| g.param(set, ParamId(i))).collect()
}
