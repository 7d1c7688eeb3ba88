//! Latitude-longitude environment maps, HDR exposure merging and mirror-sphere
//! probe unwrapping.
//!
//! Row 0 is the north pole (+Z). Texel `(i, j)` of an `H × W` map has its
//! centre at `θ = (i + ½)π/H`, `φ = (j + ½)2π/W`, with `φ` measured from +X
//! toward +Y.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::Image;
use crate::math::{acos, atan2, cos, floor, sin, spherical_dir, sqrt, Vec3, PI};
use crate::{Error, Result};

/// Per-texel unit directions and solid angles.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelGeometry {
    pub height: usize,
    pub width: usize,
    pub directions: Vec<Vec3>,
    pub solid_angles: Vec<f64>,
}

pub fn texel_geometry(height: usize, width: usize) -> TexelGeometry {
    let mut directions = Vec::with_capacity(height * width);
    let mut solid_angles = Vec::with_capacity(height * width);
    let dphi = 2.0 * PI / width as f64;
    for i in 0..height {
        let theta = (i as f64 + 0.5) * PI / height as f64;
        let c0 = cos(i as f64 * PI / height as f64);
        let c1 = cos((i + 1) as f64 * PI / height as f64);
        for j in 0..width {
            let phi = (j as f64 + 0.5) * dphi;
            directions.push(spherical_dir(theta, phi));
            solid_angles.push(dphi * (c0 - c1));
        }
    }
    TexelGeometry { height, width, directions, solid_angles }
}

/// Texel containing direction `d` (need not be normalized).
pub fn direction_to_texel(d: Vec3, height: usize, width: usize) -> (usize, usize) {
    let d = d.normalized();
    let theta = acos(d.z);
    let mut phi = atan2(d.y, d.x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    let i = ((theta / PI * height as f64) as usize).min(height - 1);
    let j = ((phi / (2.0 * PI) * width as f64) as usize).min(width - 1);
    (i, j)
}

/// RGB radiance on a lat-long grid, with the grid's directions and solid
/// angles.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    pub height: usize,
    pub width: usize,
    /// `H × W × 3`, row-major.
    pub radiance: Vec<f32>,
    pub geometry: TexelGeometry,
}

impl EnvironmentMap {
    pub fn new(height: usize, width: usize, radiance: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || radiance.len() != height * width * 3 {
            return Err(Error::shape(
                "EnvironmentMap",
                alloc::format!("{} values for {height}x{width}x3", radiance.len()),
            ));
        }
        if radiance.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("EnvironmentMap", "radiance must be finite and non-negative"));
        }
        Ok(Self { height, width, radiance, geometry: texel_geometry(height, width) })
    }

    pub fn constant(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let radiance = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, radiance, geometry: texel_geometry(height, width) }
    }

    /// Point-evaluates `f` at every texel centre.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(Vec3) -> [f64; 3]) -> Self {
        let geometry = texel_geometry(height, width);
        let radiance = geometry
            .directions
            .iter()
            .flat_map(|d| f(*d).map(|v| v.max(0.0) as f32))
            .collect();
        Self { height, width, radiance, geometry }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn texel(&self, k: usize) -> [f32; 3] {
        [self.radiance[3 * k], self.radiance[3 * k + 1], self.radiance[3 * k + 2]]
    }

    pub fn direction(&self, k: usize) -> Vec3 {
        self.geometry.directions[k]
    }

    pub fn solid_angle(&self, k: usize) -> f64 {
        self.geometry.solid_angles[k]
    }

    /// `Σ radiance · solid_angle` per channel.
    pub fn flux(&self) -> [f64; 3] {
        let mut f = [0.0; 3];
        for k in 0..self.len() {
            for (c, fc) in f.iter_mut().enumerate() {
                *fc += self.radiance[3 * k + c] as f64 * self.geometry.solid_angles[k];
            }
        }
        f
    }

    /// Texelwise sum of two maps of equal size.
    pub fn add(&self, o: &EnvironmentMap) -> Result<EnvironmentMap> {
        if self.height != o.height || self.width != o.width {
            return Err(Error::shape("EnvironmentMap::add", "size mismatch"));
        }
        let radiance = self.radiance.iter().zip(&o.radiance).map(|(a, b)| a + b).collect();
        Ok(Self { radiance, ..self.clone() })
    }

    pub fn scaled(&self, s: f32) -> EnvironmentMap {
        Self { radiance: self.radiance.iter().map(|v| v * s.max(0.0)).collect(), ..self.clone() }
    }
}

/// Linear exposures of one scene. Values are in `[0, 1]`, 1 meaning clipped.
#[derive(Clone, Debug)]
pub struct ExposureStack {
    pub images: Vec<Image>,
    pub exposure_times: Vec<f64>,
}

impl ExposureStack {
    pub fn new(images: Vec<Image>, exposure_times: Vec<f64>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("exposure stack", "no images"));
        }
        if images.len() != exposure_times.len() {
            return Err(Error::invalid("exposure stack", "one exposure time per image required"));
        }
        if images.iter().any(|i| !i.same_shape(&images[0])) {
            return Err(Error::shape("hdr_merge", "images differ in shape"));
        }
        if exposure_times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("exposure stack", "exposure times must be positive"));
        }
        for (a, ta) in exposure_times.iter().enumerate() {
            if exposure_times[a + 1..].contains(ta) {
                return Err(Error::invalid("exposure stack", "exposure times must be distinct"));
            }
        }
        Ok(Self { images, exposure_times })
    }
}

/// Result of [`hdr_merge`].
#[derive(Clone, Debug)]
pub struct HdrMerge {
    pub radiance: Image,
    /// Per value: no exposure carried weight and at least one was clipped,
    /// so the shortest exposure's estimate was used.
    pub saturated: Vec<bool>,
}

/// Values at or above this count as clipped.
pub const CLIP_LEVEL: f32 = 1.0 - 1e-6;

/// Hat-weighted merge of a linear exposure stack.
pub fn hdr_merge(stack: &ExposureStack) -> Result<HdrMerge> {
    let ExposureStack { images, exposure_times } = stack;
    let first = &images[0];
    let shortest = exposure_times
        .iter()
        .enumerate()
        .fold(0, |b, (k, t)| if *t < exposure_times[b] { k } else { b });
    let n = first.data.len();
    let mut out = vec![0.0f32; n];
    let mut saturated = vec![false; n];
    for p in 0..n {
        let (mut num, mut den) = (0.0f64, 0.0f64);
        let mut clipped = false;
        for (img, t) in images.iter().zip(exposure_times) {
            let z = img.data[p].clamp(0.0, 1.0) as f64;
            let w = 1.0 - (2.0 * z - 1.0).abs();
            num += w * z / t;
            den += w;
            clipped |= img.data[p] >= CLIP_LEVEL;
        }
        out[p] = if den > 0.0 {
            (num / den) as f32
        } else {
            saturated[p] = clipped;
            (images[shortest].data[p].clamp(0.0, 1.0) as f64 / exposure_times[shortest]) as f32
        };
    }
    Ok(HdrMerge {
        radiance: Image { data: out, ..first.clone() },
        saturated,
    })
}

/// Placement of a mirror sphere in an orthographic probe image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeView {
    /// Sphere centre in continuous pixel coordinates.
    pub center: (f64, f64),
    pub radius: f64,
    /// Direction the camera looks along (towards the sphere).
    pub view_dir: Vec3,
}

impl ProbeView {
    /// Image-plane basis `(right, down)` for the viewing direction, with
    /// world +Z appearing up where possible.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let d = self.view_dir.normalized();
        let mut r = d.cross(Vec3::Z);
        if r.norm() < 1e-6 {
            r = d.cross(Vec3::Y);
        }
        let r = r.normalized();
        (r, d.cross(r))
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        let (cx, cy) = self.center;
        let ok = self.radius > 0.0
            && cx - self.radius >= 0.0
            && cy - self.radius >= 0.0
            && cx + self.radius <= width as f64
            && cy + self.radius <= height as f64
            && self.view_dir.norm() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("probe", "sphere circle must lie inside the raster"))
        }
    }

    /// Sphere normal seen at continuous pixel position, if on the sphere.
    fn normal_at(&self, px: f64, py: f64) -> Option<Vec3> {
        let a = (px - self.center.0) / self.radius;
        let b = (py - self.center.1) / self.radius;
        let r2 = a * a + b * b;
        if r2 >= 1.0 {
            return None;
        }
        let (right, down) = self.basis();
        Some(right * a + down * b - self.view_dir.normalized() * sqrt(1.0 - r2))
    }
}

/// Mirror reflection of view direction `d` about unit normal `n`.
pub fn reflect(d: Vec3, n: Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

/// Forward model of a mirror-sphere photograph: every pixel whose centre
/// falls on the sphere shows the radiance arriving from its reflection
/// direction; the rest is black.
pub fn render_probe(view: &ProbeView, width: usize, height: usize, env: impl Fn(Vec3) -> [f64; 3]) -> Result<Image> {
    view.check(width, height)?;
    let d = view.view_dir.normalized();
    let mut img = Image::zeros(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            if let Some(n) = view.normal_at(x as f64 + 0.5, y as f64 + 0.5) {
                let l = env(reflect(d, n));
                for c in 0..3 {
                    img.set(x, y, c, l[c] as f32);
                }
            }
        }
    }
    Ok(img)
}

/// Unwrapped probe: the lat-long map and, per texel, the total blend weight
/// (0 where no shot saw that direction).
#[derive(Clone, Debug)]
pub struct Unwrapped {
    pub map: EnvironmentMap,
    pub coverage: Vec<f64>,
}

/// Unwraps one or more mirror-sphere shots to an `H × W` lat-long map.
///
/// Works backwards from each texel direction `ω`: the sphere normal that
/// reflects the view ray into `ω` is `normalize(ω − d)`. Normals within
/// `rim_deg` of the silhouette are rejected; the remaining shots are blended
/// with weight `n · (−d)`, which falls to zero toward each shot's rim.
pub fn sphere_unwrap(shots: &[(&Image, ProbeView)], height: usize, width: usize, rim_deg: f64) -> Result<Unwrapped> {
    if shots.is_empty() || height == 0 || width == 0 {
        return Err(Error::invalid("sphere_unwrap", "need at least one shot and a non-empty grid"));
    }
    for (img, v) in shots {
        v.check(img.width, img.height)?;
        if img.channels != 3 {
            return Err(Error::shape("sphere_unwrap", "probe images must have 3 channels"));
        }
    }
    let geo = texel_geometry(height, width);
    let min_cos = sin(rim_deg * PI / 180.0);
    let mut radiance = vec![0.0f32; height * width * 3];
    let mut coverage = vec![0.0f64; height * width];
    let bases: Vec<(Vec3, Vec3)> = shots.iter().map(|(_, v)| v.basis()).collect();
    for (k, w_dir) in geo.directions.iter().enumerate() {
        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0;
        for ((img, v), (right, down)) in shots.iter().zip(&bases) {
            let d = v.view_dir.normalized();
            let h = *w_dir - d;
            if h.norm() < 1e-12 {
                continue;
            }
            let n = h.normalized();
            let wgt = -n.dot(d);
            if wgt < min_cos {
                continue;
            }
            let px = v.center.0 + v.radius * n.dot(*right);
            let py = v.center.1 + v.radius * n.dot(*down);
            if let Some(l) = sample_in_circle(img, v, px, py) {
                for c in 0..3 {
                    acc[c] += wgt * l[c];
                }
                wsum += wgt;
            }
        }
        if wsum > 0.0 {
            for c in 0..3 {
                radiance[3 * k + c] = (acc[c] / wsum).max(0.0) as f32;
            }
            coverage[k] = wsum;
        }
    }
    Ok(Unwrapped {
        map: EnvironmentMap { height, width, radiance, geometry: geo },
        coverage,
    })
}

/// Bilinear probe lookup using only taps whose centres lie on the sphere.
fn sample_in_circle(img: &Image, v: &ProbeView, px: f64, py: f64) -> Option<[f64; 3]> {
    let x = px - 0.5;
    let y = py - 0.5;
    let (x0, y0) = (floor(x), floor(y));
    let (fx, fy) = (x - x0, y - y0);
    let mut acc = [0.0f64; 3];
    let mut ws = 0.0;
    for (dx, dy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
        let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
        if xi < 0 || yi < 0 || xi >= img.width as i64 || yi >= img.height as i64 || w <= 0.0 {
            continue;
        }
        let (cx, cy) = (xi as f64 + 0.5 - v.center.0, yi as f64 + 0.5 - v.center.1);
        if cx * cx + cy * cy >= v.radius * v.radius {
            continue;
        }
        let p = img.pixel(xi as usize, yi as usize);
        for c in 0..3 {
            acc[c] += w * p[c] as f64;
        }
        ws += w;
    }
    (ws > 1e-9).then(|| acc.map(|a| a / ws))
}

/// Length of the overlap of `[a0, a1]` and `[b0, b1]`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Separable overlap weights between two partitions of `[0, 1]` given by
/// their edge positions (`n + 1` increasing values each).
fn overlap_table(src: &[f64], dst: &[f64]) -> Vec<Vec<(usize, f64)>> {
    (0..dst.len() - 1)
        .map(|i| {
            (0..src.len() - 1)
                .filter_map(|s| {
                    let o = overlap(src[s], src[s + 1], dst[i], dst[i + 1]);
                    (o > 0.0).then_some((s, o))
                })
                .collect()
        })
        .collect()
}

/// Edges in `1 − cos θ`, which is proportional to solid angle per row.
fn latitude_edges(h: usize) -> Vec<f64> {
    (0..=h).map(|i| 1.0 - cos(i as f64 * PI / h as f64)).collect()
}

fn longitude_edges(w: usize) -> Vec<f64> {
    (0..=w).map(|j| j as f64 / w as f64).collect()
}

/// Solid-angle-exact area resampling: every destination texel is the mean of
/// the source texels weighted by the solid angle of their overlap. Total flux
/// is preserved.
pub fn resample_latlong(src: &EnvironmentMap, height: usize, width: usize) -> Result<EnvironmentMap> {
    let ones = vec![1.0; src.len()];
    Ok(resample_latlong_masked(src, &ones, height, width)?.0)
}

/// As [`resample_latlong`], counting only source texels with positive
/// `coverage`. Also returns the covered fraction of each destination texel.
pub fn resample_latlong_masked(
    src: &EnvironmentMap,
    coverage: &[f64],
    height: usize,
    width: usize,
) -> Result<(EnvironmentMap, Vec<f64>)> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resample_latlong", "target size must be at least 1x1"));
    }
    if coverage.len() != src.len() {
        return Err(Error::shape("resample_latlong", "coverage length differs from map"));
    }
    let rows = overlap_table(&latitude_edges(src.height), &latitude_edges(height));
    let cols = overlap_table(&longitude_edges(src.width), &longitude_edges(width));
    let mut radiance = vec![0.0f32; height * width * 3];
    let mut frac = vec![0.0f64; height * width];
    for (i, row) in rows.iter().enumerate() {
        for (j, col) in cols.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            let (mut wsum, mut wall) = (0.0, 0.0);
            for &(si, wi) in row {
                for &(sj, wj) in col {
                    let w = wi * wj;
                    wall += w;
                    let k = si * src.width + sj;
                    if coverage[k] > 0.0 {
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += w * src.radiance[3 * k + c] as f64;
                        }
                        wsum += w;
                    }
                }
            }
            let k = i * width + j;
            if wsum > 0.0 {
                for c in 0..3 {
                    radiance[3 * k + c] = (acc[c] / wsum) as f32;
                }
            }
            frac[k] = if wall > 0.0 { wsum / wall } else { 0.0 };
        }
    }
    Ok((EnvironmentMap { height, width, radiance, geometry: texel_geometry(height, width) }, frac))
}
