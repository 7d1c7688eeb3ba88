//! Per-ray shading inputs that do not depend on the materials: importance
//! samples around the expected depth, their shell coordinates and the dense
//! normal/visibility lookups.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{taps, TexelSupport};
use crate::camera::Camera;
use crate::density::{composite, intervals, sample_ray, DensityField, DensityQuery, PosedField, Sampling, Shell, WorldGrid};
use crate::inpaint::DenseUVMap;
use crate::math::Vec3;
use crate::{par, rng, Error, Result};

/// Inpainted per-frame maps: world-space normals (3 channels) and one
/// visibility value per environment texel.
#[derive(Clone, Debug)]
pub struct DenseMaps {
    pub normals: DenseUVMap,
    pub visibility: DenseUVMap,
}

/// One posed frame of the sequence.
#[derive(Clone, Debug)]
pub struct RelightFrame {
    pub id: String,
    pub shell: Shell,
    pub maps: Option<DenseMaps>,
    /// Cached world density for the coarse depth pass. Without it the coarse
    /// pass queries the field directly.
    pub coarse: Option<WorldGrid>,
}

impl RelightFrame {
    pub fn new(id: impl Into<String>, shell: Shell, maps: Option<DenseMaps>) -> Self {
        Self { id: id.into(), shell, maps, coarse: None }
    }

    /// Bakes the coarse-pass cache at node spacing `spacing`.
    pub fn cache_coarse(&mut self, field: &DensityField, spacing: f64) -> Result<()> {
        let q = PosedField { shell: &self.shell, field };
        self.coarse = Some(WorldGrid::bake(&q, self.shell.bounds(), spacing)?);
        Ok(())
    }

    /// The dense maps, checked against an environment of `env_len` texels.
    pub(crate) fn checked_maps(&self, env_len: usize) -> Result<&DenseMaps> {
        let m = self.maps.as_ref().ok_or_else(|| Error::Missing { what: "dense maps", id: self.id.clone() })?;
        let (n, v) = (&m.normals, &m.visibility);
        if n.channels != 3 || n.height != n.width || v.height != v.width || v.channels != env_len {
            return Err(Error::shape(
                "dense maps",
                alloc::format!(
                    "frame `{}`: normals {}x{}x{}, visibility {}x{}x{} for {env_len} light directions",
                    self.id, n.height, n.width, n.channels, v.height, v.width, v.channels
                ),
            ));
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayConfig {
    /// Spacing of the coarse depth pass, metres.
    pub coarse_spacing: f64,
    /// Importance samples per ray.
    pub samples: usize,
    /// Std of the importance samples around the coarse depth, metres.
    pub sigma_d: f64,
    /// Samples with smaller compositing weight are dropped.
    pub min_weight: f64,
    pub seed: u64,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self { coarse_spacing: 0.01, samples: 16, sigma_d: 0.02, min_weight: 1e-5, seed: 0 }
    }
}

impl RayConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if !(self.coarse_spacing > 0.0 && self.sigma_d > 0.0 && self.min_weight >= 0.0) || self.samples < 2 {
            return Err(Error::invalid("RayConfig", "spacing and σ_d must be positive, at least two samples"));
        }
        Ok(())
    }
}

/// Bilinear taps of `map` restricted to chart `label` and to valid texels.
pub(crate) fn valid_taps(map: &DenseUVMap, sup: &TexelSupport, u: f64, v: f64, label: u16) -> Option<([u32; 4], [f32; 4])> {
    let t = taps(map.height, map.width, u, v, Some((sup, label)));
    let mut w = [0.0f64; 4];
    for k in 0..4 {
        if map.valid[t.idx[k]] && sup.labels[t.idx[k]] == label {
            w[k] = t.w[k];
        }
    }
    let s: f64 = w.iter().sum();
    (s > 1e-9).then(|| (t.idx.map(|i| i as u32), w.map(|x| (x / s) as f32)))
}

/// Packed samples of a set of rays.
#[derive(Clone, Debug, Default)]
pub(crate) struct RaySamples {
    /// `offsets[r]..offsets[r + 1]` are the samples of ray `r`.
    pub offsets: Vec<usize>,
    pub weight: Vec<f32>,
    /// `u, v` and `h` over the shell half-width.
    pub uvh: Vec<[f32; 3]>,
    /// Chart label of the sample's UV position.
    pub label: Vec<u16>,
    pub normal: Vec<Vec3>,
    /// Toward the camera.
    pub view: Vec<Vec3>,
    pub vis_idx: Vec<[u32; 4]>,
    pub vis_w: Vec<[f32; 4]>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.weight.len()
    }

    /// Visibility of sample `s` toward every environment texel.
    pub fn visibility(&self, s: usize, vis: &DenseUVMap) -> Vec<f32> {
        let d = vis.channels;
        let mut out = alloc::vec![0.0f32; d];
        for t in 0..4 {
            let w = self.vis_w[s][t];
            if w == 0.0 {
                continue;
            }
            let row = &vis.values[self.vis_idx[s][t] as usize * d..][..d];
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        out
    }
}

struct Sample {
    weight: f32,
    uvh: [f32; 3],
    label: u16,
    normal: Vec3,
    vis: ([u32; 4], [f32; 4]),
}

/// Supports of both dense maps of a frame.
pub(crate) struct FrameSupport {
    pub normals: TexelSupport,
    pub visibility: TexelSupport,
}

impl FrameSupport {
    pub fn new(frame: &RelightFrame, maps: &DenseMaps) -> Self {
        let mesh = &frame.shell.body.mesh;
        Self { normals: mesh.texel_support(maps.normals.height), visibility: mesh.texel_support(maps.visibility.height) }
    }
}

/// Samples of the given pixels of `camera`. The importance draws of each ray
/// are seeded by `(cfg.seed, salt, pixel)`, so re-rendering a pixel gives the
/// same samples.
pub(crate) fn prepare_rays(
    field: &DensityField,
    frame: &RelightFrame,
    maps: &DenseMaps,
    sup: &FrameSupport,
    camera: &Camera,
    pixels: &[usize],
    cfg: &RayConfig,
    salt: u64,
) -> Result<RaySamples> {
    cfg.check()?;
    let exact = PosedField { shell: &frame.shell, field };
    let mesh = &frame.shell.body.mesh;
    let w = camera.width;
    if let Some(&p) = pixels.iter().find(|p| **p >= camera.width * camera.height) {
        return Err(Error::invalid("prepare_rays", alloc::format!("pixel {p} outside a {}x{} camera", camera.width, camera.height)));
    }
    let per_ray: Vec<(Vec3, Vec<Sample>)> = par::map_range(pixels.len(), |r| {
        let px = pixels[r];
        let (o, d) = camera.pixel_ray(px % w, px / w);
        let view = d * -1.0;
        let Some((near, far)) = frame.shell.near_far(o, d) else { return (view, Vec::new()) };
        let n = (libm::ceil((far - near) / cfg.coarse_spacing) as usize).max(2);
        let step = (far - near) / n as f64;
        let depths: Vec<f64> = (0..n).map(|k| near + (k as f64 + 0.5) * step).collect();
        // Expected depth and the depth of the heaviest coarse sample.
        let coarse_depth = |q: &dyn Fn(Vec3) -> f64| {
            let sig: Vec<f64> = depths.iter().map(|t| q(o + d * *t)).collect();
            let c = composite(&depths, &intervals(&depths), &sig, None).expect("valid samples");
            let k = (0..n).fold(0, |b, i| if c.weights[i] > c.weights[b] { i } else { b });
            c.depth.map(|dh| (dh, depths[k]))
        };
        let fine_pass = |dhat: f64| {
            let mut rr = rng::stream(cfg.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15), px as u64);
            let fine = sample_ray(near, far, cfg.samples, Sampling::Importance { mean: dhat, std: cfg.sigma_d }, &mut rr)
                .expect("valid interval");
            let pts: Vec<_> = fine.iter().map(|t| frame.shell.locate(o + d * *t)).collect();
            let fs: Vec<f64> = pts.iter().map(|p| p.as_ref().map_or(0.0, |p| field.sigma(p))).collect();
            let out = composite(&fine, &intervals(&fine), &fs, None).expect("valid samples");
            (pts, out)
        };
        let first = match &frame.coarse {
            Some(g) => coarse_depth(&|x| g.sigma(x)),
            None => coarse_depth(&|x| exact.sigma(x)),
        };
        let Some((dhat, _)) = first else { return (view, Vec::new()) };
        let mut best = fine_pass(dhat);
        // When the fine samples see through, the centre missed the surface.
        // Two ways that happens: the trilinear cache thickens near misses and
        // stops the coarse ray early, and a faint layer in front of the
        // surface pulls the expected depth into the empty gap between them.
        // Retry on the exact field, then at its heaviest coarse sample.
        if best.1.opacity < 0.5 {
            let exact_first = if frame.coarse.is_some() { coarse_depth(&|x| exact.sigma(x)) } else { first };
            let mut tried = alloc::vec![dhat];
            let retries = exact_first.map_or(Vec::new(), |(a, b)| alloc::vec![a, b]);
            for c in retries {
                if best.1.opacity >= 0.5 || tried.iter().any(|t| (t - c).abs() <= 1e-9) {
                    continue;
                }
                tried.push(c);
                let next = fine_pass(c);
                if next.1.opacity > best.1.opacity {
                    best = next;
                }
            }
        }
        let (pts, out) = best;
        let mut samples = Vec::new();
        for (p, wt) in pts.iter().zip(&out.weights) {
            let Some(p) = p else { continue };
            if *wt <= cfg.min_weight {
                continue;
            }
            let (u, v) = (p.local[0], p.local[1]);
            let Some(chart) = mesh.chart_at(u, v) else { continue };
            let label = chart as u16 + 1;
            let Some((ni, nw)) = valid_taps(&maps.normals, &sup.normals, u, v, label) else { continue };
            let Some(vis) = valid_taps(&maps.visibility, &sup.visibility, u, v, label) else { continue };
            let mut nrm = Vec3::ZERO;
            for t in 0..4 {
                let q = &maps.normals.values[ni[t] as usize * 3..][..3];
                nrm = nrm + Vec3::new(q[0] as f64, q[1] as f64, q[2] as f64) * nw[t] as f64;
            }
            if nrm.norm() < 1e-6 {
                continue;
            }
            samples.push(Sample {
                weight: *wt as f32,
                uvh: [u as f32, v as f32, p.local[2] as f32],
                label,
                normal: nrm.normalized(),
                vis,
            });
        }
        (view, samples)
    });
    let mut out = RaySamples { offsets: Vec::with_capacity(pixels.len() + 1), ..Default::default() };
    out.offsets.push(0);
    for (view, ss) in per_ray {
        for s in ss {
            out.weight.push(s.weight);
            out.uvh.push(s.uvh);
            out.label.push(s.label);
            out.normal.push(s.normal);
            out.view.push(view);
            out.vis_idx.push(s.vis.0);
            out.vis_w.push(s.vis.1);
        }
        out.offsets.push(out.weight.len());
    }
    Ok(out)
}
