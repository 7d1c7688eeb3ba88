//! Evaluating canonical fields in a posed frame, and world-space caches.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::field::{AnalyticField, DensityField, FieldPoint};
use super::render::{composite, intervals};
use crate::body::PosedBody;
use crate::camera::Camera;
use crate::image::Image;
use crate::math::{Aabb, Vec3};
use crate::{par, Error, Result};

/// World-space density (and color) lookup.
pub trait DensityQuery: Sync {
    fn sigma(&self, x: Vec3) -> f64;

    fn sigma_color(&self, x: Vec3) -> (f64, [f64; 3]) {
        (self.sigma(x), [0.0; 3])
    }
}

impl DensityQuery for AnalyticField {
    fn sigma(&self, x: Vec3) -> f64 {
        self.sigma_at(x)
    }

    fn sigma_color(&self, x: Vec3) -> (f64, [f64; 3]) {
        (self.sigma_at(x), self.color)
    }
}

/// Conservative occupancy of the shell on a coarse grid: a cell is flagged
/// when some point of it may lie within the shell half-width of the surface.
#[derive(Clone, Debug)]
pub struct DistanceBound {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    maybe: Vec<bool>,
}

impl DistanceBound {
    pub fn build(body: &PosedBody, cell: f64) -> Self {
        let hw = body.half_width();
        let b = body.bounds().padded(hw + cell);
        let ext = b.extent();
        let dims = [0, 1, 2].map(|a| (libm::ceil(ext[a] / cell) as usize).max(1));
        let half_diag = 0.5 * cell * libm::sqrt(3.0);
        let n = dims[0] * dims[1] * dims[2];
        let maybe = par::map_range(n, |idx| {
            let i = idx % dims[0];
            let j = (idx / dims[0]) % dims[1];
            let k = idx / (dims[0] * dims[1]);
            let c = b.min + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * cell;
            body.nearest(c, hw + half_diag).is_some()
        });
        Self { origin: b.min, cell, dims, maybe }
    }

    pub fn may_be_on_shell(&self, x: Vec3) -> bool {
        let r = (x - self.origin) / self.cell;
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = libm::floor(r[a]);
            if !(f >= 0.0) || f as usize >= self.dims[a] {
                return false;
            }
            ijk[a] = f as usize;
        }
        self.maybe[(ijk[2] * self.dims[1] + ijk[1]) * self.dims[0] + ijk[0]]
    }
}

/// A posed body with a shell-occupancy accelerator.
#[derive(Clone, Debug)]
pub struct Shell {
    pub body: Arc<PosedBody>,
    bound: DistanceBound,
}

impl Shell {
    pub fn new(body: Arc<PosedBody>) -> Self {
        let cell = 2.0 * body.half_width().min(0.05).max(0.005);
        let bound = DistanceBound::build(&body, cell);
        Self { body, bound }
    }

    /// Shell coordinates of `x`, or `None` off the shell.
    pub fn locate(&self, x: Vec3) -> Option<FieldPoint> {
        if !self.bound.may_be_on_shell(x) {
            return None;
        }
        let lc = self.body.project_to_surface(x)?;
        let rest = self.body.unwarp_with(x, lc.face, lc.bary).ok()?;
        Some(FieldPoint {
            rest,
            canonical: self.body.mesh.normalize_canonical(rest),
            local: [lc.u, lc.v, lc.h / self.body.half_width()],
        })
    }

    /// Posed bounds padded by the shell half-width.
    pub fn bounds(&self) -> Aabb {
        self.body.bounds().padded(self.body.half_width())
    }

    /// Ray interval inside [`Shell::bounds`].
    pub fn near_far(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        self.bounds().ray_interval(o, d, 0.0, f64::INFINITY).filter(|(a, b)| b > a)
    }
}

/// A canonical field seen through a posed shell; zero off the shell.
#[derive(Clone, Copy)]
pub struct PosedField<'a> {
    pub shell: &'a Shell,
    pub field: &'a DensityField,
}

impl DensityQuery for PosedField<'_> {
    fn sigma(&self, x: Vec3) -> f64 {
        self.shell.locate(x).map_or(0.0, |p| self.field.sigma(&p))
    }

    fn sigma_color(&self, x: Vec3) -> (f64, [f64; 3]) {
        match self.shell.locate(x) {
            Some(p) => {
                let (_, s, c) = self.field.eval(&p);
                (s, c)
            }
            None => (0.0, [0.0; 3]),
        }
    }
}

/// Density sampled on a regular world grid, read back trilinearly; zero
/// outside the grid.
#[derive(Clone, Debug)]
pub struct WorldGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub sigma: Vec<f32>,
}

impl WorldGrid {
    pub fn bake(query: &impl DensityQuery, bounds: Aabb, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !bounds.min.is_finite() || !bounds.max.is_finite() {
            return Err(Error::invalid("WorldGrid", "needs finite bounds and a positive spacing"));
        }
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|a| (libm::ceil(ext[a] / spacing) as usize + 1).max(2));
        let n = dims[0] * dims[1] * dims[2];
        let origin = bounds.min;
        let sigma = par::map_range(n, |idx| {
            let i = idx % dims[0];
            let j = (idx / dims[0]) % dims[1];
            let k = idx / (dims[0] * dims[1]);
            query.sigma(origin + Vec3::new(i as f64, j as f64, k as f64) * spacing) as f32
        });
        Ok(Self { origin, spacing, dims, sigma })
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ) * self.spacing;
        Aabb { min: self.origin, max: self.origin + ext }
    }
}

impl DensityQuery for WorldGrid {
    fn sigma(&self, x: Vec3) -> f64 {
        let r = (x - self.origin) / self.spacing;
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let hi = (self.dims[a] - 1) as f64;
            if !(r[a] >= 0.0 && r[a] <= hi) {
                return 0.0;
            }
            let i = (libm::floor(r[a]) as usize).min(self.dims[a] - 2);
            i0[a] = i;
            f[a] = r[a] - i as f64;
        }
        let at = |i: usize, j: usize, k: usize| self.sigma[(k * self.dims[1] + j) * self.dims[0] + i] as f64;
        let mut acc = 0.0;
        for t in 0..8 {
            let (di, dj, dk) = (t & 1, (t >> 1) & 1, (t >> 2) & 1);
            let w = (if di == 1 { f[0] } else { 1.0 - f[0] })
                * (if dj == 1 { f[1] } else { 1.0 - f[1] })
                * (if dk == 1 { f[2] } else { 1.0 - f[2] });
            if w != 0.0 {
                acc += w * at(i0[0] + di, i0[1] + dj, i0[2] + dk);
            }
        }
        acc
    }
}

/// Per-pixel color, opacity and expected depth of one camera.
#[derive(Clone, Debug)]
pub struct ViewRender {
    pub rgb: Image,
    pub opacity: Vec<f64>,
    /// Depth along the (unit) pixel ray.
    pub depth: Vec<Option<f64>>,
}

/// Second pass around a first depth estimate: `samples` midpoints over
/// `depth ± half_width`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRefine {
    pub half_width: f64,
    pub samples: usize,
}

/// Renders `query` with `samples` midpoint samples per ray inside `bounds`.
pub fn render_camera(query: &impl DensityQuery, camera: &Camera, bounds: Aabb, samples: usize) -> Result<ViewRender> {
    render_camera_refined(query, camera, bounds, samples, None)
}

fn midpoints(near: f64, far: f64, n: usize) -> Vec<f64> {
    let step = (far - near) / n as f64;
    (0..n).map(|k| near + (k as f64 + 0.5) * step).collect()
}

/// [`render_camera`], optionally re-estimating each valid depth from dense
/// samples around the first estimate. Color and opacity come from the
/// first pass.
pub fn render_camera_refined(
    query: &impl DensityQuery,
    camera: &Camera,
    bounds: Aabb,
    samples: usize,
    refine: Option<DepthRefine>,
) -> Result<ViewRender> {
    if samples < 2 || refine.is_some_and(|r| r.samples < 2 || !(r.half_width > 0.0)) {
        return Err(Error::invalid("render_camera", "need at least two samples per ray and a positive window"));
    }
    let (w, h) = (camera.width, camera.height);
    let px: Vec<([f64; 3], f64, Option<f64>)> = par::map_range(w * h, |i| {
        let (o, d) = camera.pixel_ray(i % w, i / w);
        let Some((near, far)) = bounds.ray_interval(o, d, 0.0, f64::INFINITY).filter(|(a, b)| b > a) else {
            return ([0.0; 3], 0.0, None);
        };
        let depths = midpoints(near, far, samples);
        let mut sig = vec![0.0; samples];
        let mut col = vec![[0.0; 3]; samples];
        for (k, t) in depths.iter().enumerate() {
            (sig[k], col[k]) = query.sigma_color(o + d * *t);
        }
        let r = composite(&depths, &intervals(&depths), &sig, Some(&col)).expect("valid samples");
        let depth = match (r.depth, refine) {
            (Some(t0), Some(rf)) => {
                let (a, b) = ((t0 - rf.half_width).max(near), (t0 + rf.half_width).min(far));
                let fine = midpoints(a, b, rf.samples);
                let fs: Vec<f64> = fine.iter().map(|t| query.sigma(o + d * *t)).collect();
                composite(&fine, &intervals(&fine), &fs, None).expect("valid samples").depth.or(Some(t0))
            }
            (d, _) => d,
        };
        (r.rgb, r.opacity, depth)
    });
    let mut rgb = Image::zeros(w, h, 3);
    let mut opacity = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for (i, (c, o, d)) in px.into_iter().enumerate() {
        rgb.pixel_mut(i % w, i / w).copy_from_slice(&c.map(|v| v as f32));
        opacity.push(o);
        depth.push(d);
    }
    Ok(ViewRender { rgb, opacity, depth })
}
