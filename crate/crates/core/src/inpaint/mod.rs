//! Densifying sparse UV maps: morphological region growing (the baseline)
//! and trainable partial-convolution networks for normals and visibility.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::TexelSupport;
use crate::body::PosedBody;
use crate::camera::Camera;
use crate::geomaps::SparseUVMap;
use crate::math::{acos, Vec3};
use crate::{Error, Result};

mod net;
mod train;

pub use net::{inpaint_forward, InpaintInputs, InpaintKind, InpaintNetConfig, TrainedInpainter};
pub use train::{train_inpainter, InpaintDataset, InpaintObjective, InpaintSample, InpaintTrainConfig, InpaintTrainLog};

/// A UV raster with per-texel validity. Texel-major, channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseUVMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DenseUVMap {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("DenseUVMap", "dimensions must be positive"));
        }
        let n = height * width;
        Ok(Self { height, width, channels, values: vec![0.0; n * channels], valid: vec![false; n] })
    }

    pub fn from_sparse(m: &SparseUVMap) -> Self {
        Self { height: m.height, width: m.width, channels: m.channels, values: m.values.clone(), valid: m.valid.clone() }
    }

    /// Map filled from `f(row, col)` on every texel of a nonzero chart label.
    pub fn from_support(support: &TexelSupport, channels: usize, f: impl Fn(usize, usize) -> Option<Vec<f32>>) -> Result<Self> {
        let mut m = Self::new(support.height, support.width, channels)?;
        for k in 0..m.valid.len() {
            if support.labels[k] == 0 {
                continue;
            }
            if let Some(v) = f(k / m.width, k % m.width) {
                if v.len() != channels {
                    return Err(Error::shape("DenseUVMap", alloc::format!("{} values for {channels} channels", v.len())));
                }
                m.values[k * channels..(k + 1) * channels].copy_from_slice(&v);
                m.valid[k] = true;
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn texel(&self, k: usize) -> &[f32] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Copy keeping only texels where `keep` is set.
    pub fn masked(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::shape("DenseUVMap::masked", alloc::format!("{} flags for {} texels", keep.len(), self.len())));
        }
        let mut m = self.clone();
        for (k, on) in keep.iter().enumerate() {
            if !on || !m.valid[k] {
                m.valid[k] = false;
                m.values[k * m.channels..(k + 1) * m.channels].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(m)
    }

    pub(crate) fn check_support(&self, op: &'static str, s: &TexelSupport) -> Result<()> {
        if s.height != self.height || s.width != self.width {
            return Err(Error::shape(op, alloc::format!("support {}x{} for map {}x{}", s.height, s.width, self.height, self.width)));
        }
        Ok(())
    }
}

/// Result of [`morph_inpaint`].
#[derive(Clone, Debug, PartialEq)]
pub struct MorphOutput {
    pub map: DenseUVMap,
    /// Chart labels that had no valid texel and were left empty.
    pub empty_charts: Vec<u16>,
    /// Dilation rounds actually run.
    pub rounds: usize,
}

/// Region growing inside each chart: every invalid texel with at least one
/// valid 8-neighbour of the same chart takes their mean and becomes valid.
/// Rounds are synchronous, so the result does not depend on scan order.
/// Stops when nothing changes or after `iterations` rounds. With
/// `renormalize`, filled texels are scaled to unit length (normal maps).
pub fn morph_inpaint(map: &DenseUVMap, support: &TexelSupport, iterations: usize, renormalize: bool) -> Result<MorphOutput> {
    map.check_support("morph_inpaint", support)?;
    let (h, w, c) = (map.height, map.width, map.channels);
    let mut out = map.clone();
    let mut rounds = 0;
    let mut acc = vec![0.0f64; c];
    while rounds < iterations {
        let mut updates: Vec<(usize, Vec<f32>)> = Vec::new();
        for k in 0..h * w {
            let label = support.labels[k];
            if out.valid[k] || label == 0 {
                continue;
            }
            let (i, j) = ((k / w) as isize, (k % w) as isize);
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut n = 0usize;
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    let (y, x) = (i + di, j + dj);
                    if (di == 0 && dj == 0) || y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        continue;
                    }
                    let q = y as usize * w + x as usize;
                    if out.valid[q] && support.labels[q] == label {
                        n += 1;
                        for (a, v) in acc.iter_mut().zip(out.texel(q)) {
                            *a += *v as f64;
                        }
                    }
                }
            }
            if n > 0 {
                let mut v: Vec<f32> = acc.iter().map(|a| (a / n as f64) as f32).collect();
                if renormalize {
                    let len = crate::math::sqrt(v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>());
                    if len > 1e-12 {
                        v.iter_mut().for_each(|x| *x = (*x as f64 / len) as f32);
                    }
                }
                updates.push((k, v));
            }
        }
        if updates.is_empty() {
            break;
        }
        for (k, v) in updates {
            out.values[k * c..(k + 1) * c].copy_from_slice(&v);
            out.valid[k] = true;
        }
        rounds += 1;
    }
    let mut labels: Vec<u16> = support.labels.iter().copied().filter(|l| *l != 0).collect();
    labels.sort_unstable();
    labels.dedup();
    let empty_charts = labels
        .into_iter()
        .filter(|l| !(0..h * w).any(|k| support.labels[k] == *l && out.valid[k]))
        .collect();
    Ok(MorphOutput { map: out, empty_charts, rounds })
}

/// Texels a set of cameras would bake: the texel's surface point projects
/// inside the image, is not occluded by the posed mesh, and faces the
/// camera with `cos θ ≥ min_cos` (grazing texels fall between pixel
/// footprints in a real bake).
pub fn visible_texels(body: &PosedBody, cameras: &[Camera], res: usize, min_cos: f64) -> Vec<bool> {
    let bind = body.mesh.texel_bindings(res);
    crate::par::map_range(res * res, |k| {
        let Some((face, bary)) = bind[k] else { return false };
        let f = body.frame_at(face, bary);
        cameras.iter().any(|cam| {
            let o = cam.center();
            let to = f.point - o;
            let dist = to.norm();
            let d = to / dist;
            if -d.dot(f.normal) < min_cos || cam.project(f.point).is_none_or(|(x, y, z)| {
                z <= 0.0 || x < 0.0 || y < 0.0 || x >= cam.width as f64 || y >= cam.height as f64
            }) {
                return false;
            }
            body.raycast(o, d, 0.0, dist * (1.0 - 1e-6)).is_none_or(|hit| hit.t >= dist - 1e-4)
        })
    })
}

/// Mean angle in degrees between unit-normal maps over texels where `mask`
/// is set and both maps are valid.
pub fn masked_angular_error(pred: &DenseUVMap, target: &DenseUVMap, mask: &[bool]) -> Result<f64> {
    check_pair("masked_angular_error", pred, target, mask)?;
    let (mut s, mut n) = (0.0, 0usize);
    for k in 0..pred.len() {
        if !(mask[k] && pred.valid[k] && target.valid[k]) {
            continue;
        }
        let (a, b) = (pred.texel(k), target.texel(k));
        let va = Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64).normalized();
        let vb = Vec3::new(b[0] as f64, b[1] as f64, b[2] as f64).normalized();
        s += acos(va.dot(vb).clamp(-1.0, 1.0)).to_degrees();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

/// Mean absolute difference per value over texels where `mask` is set and
/// both maps are valid.
pub fn masked_l1(pred: &DenseUVMap, target: &DenseUVMap, mask: &[bool]) -> Result<f64> {
    check_pair("masked_l1", pred, target, mask)?;
    let (mut s, mut n) = (0.0, 0usize);
    for k in 0..pred.len() {
        if mask[k] && pred.valid[k] && target.valid[k] {
            s += pred.texel(k).iter().zip(target.texel(k)).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
            n += pred.channels;
        }
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

fn check_pair(op: &'static str, a: &DenseUVMap, b: &DenseUVMap, mask: &[bool]) -> Result<()> {
    if a.height != b.height || a.width != b.width || a.channels != b.channels || mask.len() != a.len() {
        return Err(Error::shape(op, alloc::format!(
            "{}x{}x{} vs {}x{}x{} with {} mask flags",
            a.height, a.width, a.channels, b.height, b.width, b.channels, mask.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
