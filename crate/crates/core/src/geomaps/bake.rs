use alloc::vec::Vec;

use super::{normals_from_depth, visibility_at_point, MarchConfig, SparseUVMap, SplatKey};
use crate::camera::Camera;
use crate::density::{composite, intervals, DensityField, DensityQuery, PosedField, Shell, WorldGrid};
use crate::envlight::TexelGeometry;
use crate::math::Vec3;
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BakeConfig {
    /// Side of the square normal map.
    pub normal_res: usize,
    /// Side of the square visibility map.
    pub visibility_res: usize,
    /// Node spacing of the cached world density grid, metres.
    pub grid_spacing: f64,
    /// Distance between coarse depth samples along camera rays, metres.
    pub sample_spacing: f64,
    /// Samples of the exact field over `coarse depth ± 2·grid_spacing`.
    pub refine_samples: usize,
    pub march: MarchConfig,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self { normal_res: 64, visibility_res: 32, grid_spacing: 0.01, sample_spacing: 0.004, refine_samples: 48, march: MarchConfig::default() }
    }
}

/// Sparse maps of one pose.
#[derive(Clone, Debug)]
pub struct PoseMaps {
    /// World-space unit normals, 3 channels.
    pub normals: SparseUVMap,
    /// One soft visibility value per environment texel.
    pub visibility: SparseUVMap,
    pub normal_coverage: f64,
    pub visibility_coverage: f64,
}

/// Exact field within `radius` of `anchor`, cached grid elsewhere. Trilinear
/// lookup smears a sharp surface by about a cell, which would shadow the
/// start of every march.
struct NearExact<'a> {
    exact: &'a PosedField<'a>,
    grid: &'a WorldGrid,
    anchor: Vec3,
    radius: f64,
}

impl DensityQuery for NearExact<'_> {
    fn sigma(&self, x: Vec3) -> f64 {
        if (x - self.anchor).norm_sq() < self.radius * self.radius {
            self.exact.sigma(x)
        } else {
            self.grid.sigma(x)
        }
    }
}

struct PixelHit {
    depth: Option<f64>,
    best: Option<(f64, [f64; 2])>,
}

/// Renders expected depth from every camera, derives normals, and splats
/// them (and visibility at the winning surface points) into UV maps.
pub fn bake_pose_maps(
    field: &DensityField,
    shell: &Shell,
    cameras: &[Camera],
    env: &TexelGeometry,
    cfg: &BakeConfig,
) -> Result<PoseMaps> {
    if cameras.is_empty() {
        return Err(Error::invalid("bake_pose_maps", "no cameras"));
    }
    if !(cfg.grid_spacing > 0.0 && cfg.sample_spacing > 0.0) || cfg.refine_samples < 2 {
        return Err(Error::invalid("bake_pose_maps", "spacings must be positive, refine samples at least 2"));
    }
    let exact = PosedField { shell, field };
    let grid = WorldGrid::bake(&exact, shell.bounds(), cfg.grid_spacing)?;
    let bound = grid.bounds();
    let mut normals = SparseUVMap::new(cfg.normal_res, cfg.normal_res, 3)?;
    // winning surface point and normal per visibility texel
    let mut anchors = SparseUVMap::new(cfg.visibility_res, cfg.visibility_res, 6)?;
    for (ci, cam) in cameras.iter().enumerate() {
        let (w, h) = (cam.width, cam.height);
        let hits: Vec<PixelHit> = par::map_range(w * h, |i| {
            let none = PixelHit { depth: None, best: None };
            let (o, d) = cam.pixel_ray(i % w, i / w);
            let Some((near, far)) = bound.ray_interval(o, d, 0.0, f64::INFINITY).filter(|(a, b)| b > a) else {
                return none;
            };
            let n = (libm::ceil((far - near) / cfg.sample_spacing) as usize).max(2);
            let step = (far - near) / n as f64;
            let depths: Vec<f64> = (0..n).map(|k| near + (k as f64 + 0.5) * step).collect();
            let sig: Vec<f64> = depths.iter().map(|t| grid.sigma(o + d * *t)).collect();
            let r = composite(&depths, &intervals(&depths), &sig, None).expect("valid samples");
            let Some(t0) = r.depth else { return none };
            // the grid aliases sharp surfaces; redo the ray near t0 on the exact field
            let half = 2.0 * cfg.grid_spacing;
            let (a, b) = ((t0 - half).max(near), (t0 + half).min(far));
            let m = cfg.refine_samples.max(2);
            let fine: Vec<f64> = (0..m).map(|k| a + (k as f64 + 0.5) * (b - a) / m as f64).collect();
            let pts: Vec<_> = fine.iter().map(|t| shell.locate(o + d * *t)).collect();
            let fs: Vec<f64> = pts.iter().map(|p| p.as_ref().map_or(0.0, |p| field.sigma(p))).collect();
            let r = composite(&fine, &intervals(&fine), &fs, None).expect("valid samples");
            let Some(depth) = r.depth else { return none };
            let mut k = 0;
            for (j, wj) in r.weights.iter().enumerate() {
                if *wj > r.weights[k] {
                    k = j;
                }
            }
            let best = pts[k].map(|p| (r.weights[k], [p.local[0], p.local[1]]));
            PixelHit { depth: Some(depth), best }
        });
        let depth: Vec<Option<f64>> = hits.iter().map(|p| p.depth).collect();
        let nrm = normals_from_depth(&depth, cam)?;
        for (i, (hit, n)) in hits.iter().zip(&nrm).enumerate() {
            let (Some(n), Some((wgt, uv)), Some(t)) = (n, hit.best, hit.depth) else { continue };
            let key = SplatKey { weight: wgt, camera: ci as u32, ray: i as u32 };
            if let Some(k) = normals.texel_of(uv[0], uv[1]) {
                normals.offer(k, key, &n.to_f32())?;
            }
            if let Some(k) = anchors.texel_of(uv[0], uv[1]) {
                let (o, d) = cam.pixel_ray(i % w, i / w);
                let p = (o + d * t).to_f32();
                let nf = n.to_f32();
                anchors.offer(k, key, &[p[0], p[1], p[2], nf[0], nf[1], nf[2]])?;
            }
        }
    }
    let dirs = &env.directions;
    let mut visibility = SparseUVMap::new(cfg.visibility_res, cfg.visibility_res, dirs.len())?;
    let rows: Vec<Option<Vec<f32>>> = par::map_range(anchors.valid.len(), |k| {
        anchors.valid[k].then(|| {
            let a = anchors.texel(k);
            let p = Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64);
            let n = Vec3::new(a[3] as f64, a[4] as f64, a[5] as f64);
            let q = NearExact { exact: &exact, grid: &grid, anchor: p, radius: cfg.march.lift + 2.0 * cfg.grid_spacing };
            visibility_at_point(&q, p, n, dirs, &bound, cfg.march)
        })
    });
    for (k, row) in rows.into_iter().enumerate() {
        if let Some(row) = row {
            let (cam, ray) = anchors.source[k];
            visibility.offer(k, SplatKey { weight: anchors.best_weight[k] as f64, camera: cam, ray }, &row)?;
        }
    }
    let mesh = &shell.body.mesh;
    let normal_coverage = normals.coverage(&mesh.texel_support(cfg.normal_res));
    let visibility_coverage = visibility.coverage(&mesh.texel_support(cfg.visibility_res));
    Ok(PoseMaps { normals, visibility, normal_coverage, visibility_coverage })
}
