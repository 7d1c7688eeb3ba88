//! Emission–absorption compositing along rays.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::math::{exp, normal_cdf, normal_quantile, Vec3};
use crate::{Error, Result};

/// Opacity above which the expected depth is trusted.
pub const OPACITY_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Result<Self> {
        let n = dir.norm();
        if !origin.is_finite() || !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("ray", "needs a finite origin and a non-zero direction"));
        }
        Ok(Self { origin, dir: dir / n })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// How depths are placed in `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// One uniform draw per equal bin.
    Stratified,
    /// Bin midpoints (deterministic).
    Midpoint,
    /// Stratified draws from a Gaussian clipped to `[near, far]`.
    Importance { mean: f64, std: f64 },
}

/// Sample depths, strictly increasing.
pub fn sample_ray(near: f64, far: f64, n: usize, mode: Sampling, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(near.is_finite() && far.is_finite() && near < far) {
        return Err(Error::invalid("sample_ray", alloc::format!("bounds [{near}, {far}]")));
    }
    if n < 2 {
        return Err(Error::invalid("sample_ray", "need at least two samples"));
    }
    let span = far - near;
    let bin = span / n as f64;
    let mut d: Vec<f64> = match mode {
        Sampling::Stratified => (0..n).map(|i| near + (i as f64 + rng.random::<f64>()) * bin).collect(),
        Sampling::Midpoint => (0..n).map(|i| near + (i as f64 + 0.5) * bin).collect(),
        Sampling::Importance { mean, std } => {
            if !(mean.is_finite() && std >= 0.0 && std.is_finite()) {
                return Err(Error::invalid("sample_ray", "importance needs finite mean and std >= 0"));
            }
            let mean = mean.clamp(near, far);
            if std <= span * 1e-12 {
                vec![mean; n]
            } else {
                // inverse CDF of the truncated normal on stratified uniforms
                let (a, b) = (normal_cdf((near - mean) / std), normal_cdf((far - mean) / std));
                (0..n)
                    .map(|i| {
                        let u = (i as f64 + rng.random::<f64>()) / n as f64;
                        let p = a + u * (b - a);
                        (mean + std * normal_quantile(p)).clamp(near, far)
                    })
                    .collect()
            }
        }
    };
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    // separate coincident depths by a tiny jitter
    let eps = span * 1e-7;
    for i in 1..n {
        if d[i] <= d[i - 1] {
            d[i] = d[i - 1] + eps * (0.5 + rng.random::<f64>());
        }
    }
    Ok(d)
}

/// Interval lengths `δ̄_j = δ_{j+1} − δ_j`, the last repeating its predecessor.
pub fn intervals(depths: &[f64]) -> Vec<f64> {
    let n = depths.len();
    let mut out: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    if n >= 2 {
        out.push(out[n - 2]);
    } else if n == 1 {
        out.push(0.0);
    }
    out
}

/// Result of compositing one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: [f64; 3],
    pub opacity: f64,
    /// Expected depth over the normalized weights, when opacity clears the threshold.
    pub depth: Option<f64>,
    pub weights: Vec<f64>,
    /// `T_1..T_{N+1}`.
    pub transmittance: Vec<f64>,
}

/// Composites samples at `depths` with interval lengths `deltas`.
pub fn composite(depths: &[f64], deltas: &[f64], sigmas: &[f64], colors: Option<&[[f64; 3]]>) -> Result<RenderOutput> {
    let n = depths.len();
    if n == 0 {
        return Err(Error::invalid("render_ray", "empty sample set"));
    }
    if deltas.len() != n || sigmas.len() != n || colors.is_some_and(|c| c.len() != n) {
        return Err(Error::shape("render_ray", "depths, intervals, densities and colors differ in length"));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) || deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::invalid("render_ray", "densities and intervals must be non-negative"));
    }
    let mut weights = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    let mut rgb = [0.0; 3];
    let (mut wsum, mut wd) = (0.0, 0.0);
    for i in 0..n {
        let t = exp(-acc);
        trans.push(t);
        let tau = sigmas[i] * deltas[i];
        let w = t * -libm::expm1(-tau);
        weights.push(w);
        if let Some(c) = colors {
            for k in 0..3 {
                rgb[k] += w * c[i][k];
            }
        }
        wsum += w;
        wd += w * depths[i];
        acc += tau;
    }
    trans.push(exp(-acc));
    let opacity = -libm::expm1(-acc);
    let depth = (wsum > OPACITY_THRESHOLD).then(|| (wd / wsum).clamp(depths[0], depths[n - 1]));
    Ok(RenderOutput { rgb, opacity, depth, weights, transmittance: trans })
}

/// Composites with the last-interval convention of [`intervals`].
pub fn render_ray(depths: &[f64], sigmas: &[f64], colors: Option<&[[f64; 3]]>) -> Result<RenderOutput> {
    composite(depths, &intervals(depths), sigmas, colors)
}

/// Differentiable compositing of packed rays.
///
/// `sigma` is `[S]`, `color` is `[S, 3]`; ray `r` owns samples
/// `offsets[r]..offsets[r + 1]` with interval lengths `deltas`. Returns
/// `[R, 4]` rows of `(r, g, b, opacity)`.
pub fn composite_batch(g: &mut Graph, sigma: Var, color: Var, offsets: &[usize], deltas: &[f32]) -> Result<Var> {
    let s = g.shape(sigma).to_vec();
    let c = g.shape(color).to_vec();
    let total = *offsets.last().unwrap_or(&0);
    if s != [total] || c != [total, 3] || deltas.len() != total || offsets.first() != Some(&0) {
        return Err(Error::shape(
            "composite_batch",
            alloc::format!("sigma {:?}, color {:?}, {} deltas, {} samples", s, c, deltas.len(), total),
        ));
    }
    if offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("composite_batch", "offsets must be non-decreasing"));
    }
    let rays = offsets.len() - 1;
    let (sd, cd) = (g.data(sigma), g.data(color));
    let mut out = vec![0.0f32; rays * 4];
    for r in 0..rays {
        let mut acc = 0.0f64;
        let mut rgb = [0.0f64; 3];
        for i in offsets[r]..offsets[r + 1] {
            let tau = (sd[i].max(0.0) as f64) * deltas[i] as f64;
            let w = exp(-acc) * -libm::expm1(-tau);
            for k in 0..3 {
                rgb[k] += w * cd[i * 3 + k] as f64;
            }
            acc += tau;
        }
        for k in 0..3 {
            out[r * 4 + k] = rgb[k] as f32;
        }
        out[r * 4 + 3] = -libm::expm1(-acc) as f32;
    }
    let offsets = offsets.to_vec();
    let deltas = deltas.to_vec();
    let value = Tensor::new(&[rays, 4], out)?;
    Ok(g.custom(
        &[sigma, color],
        value,
        Box::new(move |g, up, need| {
            let (sd, cd) = (g.data(sigma), g.data(color));
            let mut gs = vec![0.0f32; sd.len()];
            let mut gc = vec![0.0f32; cd.len()];
            for r in 0..offsets.len() - 1 {
                let (lo, hi) = (offsets[r], offsets[r + 1]);
                if lo == hi {
                    continue;
                }
                let gcol = [up[r * 4] as f64, up[r * 4 + 1] as f64, up[r * 4 + 2] as f64];
                let gop = up[r * 4 + 3] as f64;
                // forward pass again in f64: weights and T_{n+1}
                let mut w = Vec::with_capacity(hi - lo);
                let mut t_next = Vec::with_capacity(hi - lo);
                let mut acc = 0.0f64;
                for i in lo..hi {
                    let tau = (sd[i].max(0.0) as f64) * deltas[i] as f64;
                    w.push(exp(-acc) * -libm::expm1(-tau));
                    acc += tau;
                    t_next.push(exp(-acc));
                }
                let t_end = exp(-acc);
                // suffix sums of w_k·(gC·c_k) for k > n
                let mut tail = 0.0f64;
                for i in (lo..hi).rev() {
                    let j = i - lo;
                    let cdot: f64 = (0..3).map(|k| gcol[k] * cd[i * 3 + k] as f64).sum();
                    if need[1] {
                        for k in 0..3 {
                            gc[i * 3 + k] = (w[j] * gcol[k]) as f32;
                        }
                    }
                    // dC/dτ_n = T_{n+1}c_n − Σ_{k>n} w_k c_k ; dO/dτ_n = T_{N+1}
                    let dtau = t_next[j] * cdot - tail + gop * t_end;
                    if sd[i] > 0.0 {
                        gs[i] = (dtau * deltas[i] as f64) as f32;
                    }
                    tail += w[j] * cdot;
                }
            }
            vec![need[0].then_some(gs), need[1].then_some(gc)]
        }),
    ))
}
