//! Pose-specific geometry baked into UV space: normals from expected depth,
//! per-direction visibility, and max-weight splatting of multi-view samples.

mod bake;

pub use bake::{bake_pose_maps, BakeConfig, PoseMaps};

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::TexelSupport;
use crate::camera::Camera;
use crate::density::DensityQuery;
use crate::math::{exp, Aabb, Vec3};
use crate::{Error, Result};

/// Priority of a splat candidate: larger weight wins, then the lower camera
/// index, then the lower ray index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatKey {
    pub weight: f64,
    pub camera: u32,
    pub ray: u32,
}

impl SplatKey {
    pub fn beats(&self, other: &SplatKey) -> bool {
        self.weight > other.weight
            || (self.weight == other.weight && (self.camera, self.ray) < (other.camera, other.ray))
    }
}

/// A UV raster that is only partly observed. Row `i` spans
/// `v ∈ [i/H, (i+1)/H)`, column `j` spans `u ∈ [j/W, (j+1)/W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseUVMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
    pub best_weight: Vec<f32>,
    /// Winning `(camera, ray)` of each valid texel.
    pub source: Vec<(u32, u32)>,
}

impl SparseUVMap {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("SparseUVMap", "dimensions must be positive"));
        }
        let n = height * width;
        Ok(Self {
            height,
            width,
            channels,
            values: vec![0.0; n * channels],
            valid: vec![false; n],
            best_weight: vec![0.0; n],
            source: vec![(u32::MAX, u32::MAX); n],
        })
    }

    pub fn texel_of(&self, u: f64, v: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return None;
        }
        let j = ((u * self.width as f64) as usize).min(self.width - 1);
        let i = ((v * self.height as f64) as usize).min(self.height - 1);
        Some(i * self.width + j)
    }

    pub fn texel(&self, k: usize) -> &[f32] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    fn key(&self, k: usize) -> Option<SplatKey> {
        self.valid[k].then(|| SplatKey {
            weight: self.best_weight[k] as f64,
            camera: self.source[k].0,
            ray: self.source[k].1,
        })
    }

    /// Writes `payload` at texel `k` if `key` beats the stored winner.
    pub fn offer(&mut self, k: usize, key: SplatKey, payload: &[f32]) -> Result<bool> {
        if payload.len() != self.channels {
            return Err(Error::shape("splat_to_uv", alloc::format!("{} channels into {}", payload.len(), self.channels)));
        }
        // stored weights are f32; compare at that precision
        let key = SplatKey { weight: key.weight as f32 as f64, ..key };
        if !(key.weight > 0.0) || self.key(k).is_some_and(|cur| !key.beats(&cur)) {
            return Ok(false);
        }
        self.values[k * self.channels..(k + 1) * self.channels].copy_from_slice(payload);
        self.valid[k] = true;
        self.best_weight[k] = key.weight as f32;
        self.source[k] = (key.camera, key.ray);
        Ok(true)
    }

    /// Splats one ray: the sample with the largest weight (ties to the
    /// earlier sample) among those with `(u, v)` inside the unit square.
    pub fn splat_ray(&mut self, samples: &[([f64; 2], f64, &[f32])], camera: u32, ray: u32) -> Result<bool> {
        let mut best: Option<(usize, f64)> = None;
        for (n, (uv, w, _)) in samples.iter().enumerate() {
            if self.texel_of(uv[0], uv[1]).is_none() {
                continue;
            }
            if best.is_none_or(|(_, bw)| *w > bw) {
                best = Some((n, *w));
            }
        }
        let Some((n, w)) = best else { return Ok(false) };
        let (uv, _, payload) = samples[n];
        let k = self.texel_of(uv[0], uv[1]).expect("checked");
        self.offer(k, SplatKey { weight: w, camera, ray }, payload)
    }

    /// Fraction of chart texels (support label ≠ 0) that are valid.
    pub fn coverage(&self, support: &TexelSupport) -> f64 {
        let body: Vec<usize> = (0..self.valid.len()).filter(|&k| support.labels.get(k).is_some_and(|l| *l != 0)).collect();
        if body.is_empty() {
            return 0.0;
        }
        body.iter().filter(|&&k| self.valid[k]).count() as f64 / body.len() as f64
    }

    /// Number of valid texels.
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Per-pixel normals of a depth raster (distances along unit pixel rays).
///
/// A pixel keeps a normal only when it and both of its horizontal and both
/// of its vertical neighbours have depth.
pub fn normals_from_depth(depth: &[Option<f64>], camera: &Camera) -> Result<Vec<Option<Vec3>>> {
    let (w, h) = (camera.width, camera.height);
    if depth.len() != w * h {
        return Err(Error::shape("normals_from_depth", alloc::format!("{} depths for {w}x{h}", depth.len())));
    }
    let point = |x: usize, y: usize| -> Option<Vec3> {
        let t = depth[y * w + x]?;
        let (o, d) = camera.pixel_ray(x, y);
        Some(o + d * t)
    };
    Ok((0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
                return None;
            }
            point(x, y)?;
            let tu = point(x + 1, y)? - point(x - 1, y)?;
            let tv = point(x, y + 1)? - point(x, y - 1)?;
            let n = tu.cross(tv);
            if !(n.norm() > 0.0) {
                return None;
            }
            let n = n.normalized();
            let (_, d) = camera.pixel_ray(x, y);
            Some(if n.dot(d) > 0.0 { -n } else { n })
        })
        .collect())
}

/// Ray-march settings for visibility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchConfig {
    /// Start offset along the normal, metres.
    pub lift: f64,
    pub step: f64,
}

impl Default for MarchConfig {
    fn default() -> Self {
        Self { lift: 0.01, step: 0.01 }
    }
}

/// Transmittance from `x` along unit `dir` to the exit of `bound`
/// (midpoint rule, last step shortened).
pub fn transmittance(query: &impl DensityQuery, x: Vec3, dir: Vec3, bound: &Aabb, step: f64) -> f64 {
    let Some((_, t1)) = bound.ray_interval(x, dir, 0.0, f64::INFINITY) else {
        return 1.0;
    };
    let mut tau = 0.0;
    let mut t = 0.0;
    while t < t1 {
        let dt = step.min(t1 - t);
        tau += query.sigma(x + dir * (t + 0.5 * dt)) * dt;
        t += dt;
        if tau > 40.0 {
            break;
        }
    }
    exp(-tau)
}

/// Soft visibility toward each direction in `dirs`: transmittance for
/// front-facing directions, 0 for back-facing ones.
pub fn visibility_at_point(
    query: &impl DensityQuery,
    x: Vec3,
    n: Vec3,
    dirs: &[Vec3],
    bound: &Aabb,
    march: MarchConfig,
) -> Vec<f32> {
    let start = x + n * march.lift;
    dirs.iter()
        .map(|&w| if w.dot(n) > 0.0 { transmittance(query, start, w, bound, march.step) as f32 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests;
