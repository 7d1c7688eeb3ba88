//! Microfacet reflectance and single-bounce image-based lighting.
//!
//! Diffuse is Lambertian `a/π`. Specular is GGX with `α = ρ²`, the
//! height-correlated Smith masking term and Schlick Fresnel. The Fresnel
//! grazing value is `F90 = min(1, 50·F0)`, so `F0 = 0` switches specular off
//! entirely.

use crate::envlight::EnvironmentMap;
use crate::math::{sqrt, Vec3, PI};
use crate::{Error, Result};

/// Lower roughness bound; keeps the GGX lobe finite.
pub const RHO_MIN: f64 = 0.03;
/// Dielectric reflectance at normal incidence.
pub const DEFAULT_F0: f64 = 0.04;
/// Tolerance on unit-length inputs.
const UNIT_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingOptions {
    pub specular: bool,
    pub f0: f64,
    /// Weight each environment texel by its solid angle. Off, the sum runs
    /// over bare radiance values.
    pub solid_angle: bool,
}

impl Default for ShadingOptions {
    fn default() -> Self {
        Self { specular: true, f0: DEFAULT_F0, solid_angle: true }
    }
}

impl ShadingOptions {
    pub fn diffuse_only() -> Self {
        Self { specular: false, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.f0) {
            return Err(Error::invalid("ShadingOptions", alloc::format!("F0 {} outside [0, 1]", self.f0)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrdfSample {
    pub albedo: [f64; 3],
    pub roughness: f64,
    pub normal: Vec3,
    /// Toward the viewer.
    pub view: Vec3,
    /// Toward the light.
    pub light: Vec3,
}

/// Reflectance with its partial derivatives. `d_albedo` is the same for
/// every channel (`1/π`), `d_roughness` likewise (specular is white).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrdfValue {
    pub rgb: [f64; 3],
    pub d_albedo: f64,
    pub d_roughness: f64,
}

fn check_unit(what: &'static str, v: Vec3) -> Result<()> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(what, alloc::format!("expected a unit vector, got length {n}")));
    }
    Ok(())
}

fn check_roughness(rho: f64) -> Result<()> {
    if !(RHO_MIN..=1.0).contains(&rho) {
        return Err(Error::invalid("roughness", alloc::format!("{rho} outside [{RHO_MIN}, 1]")));
    }
    Ok(())
}

pub(crate) fn fresnel(vh: f64, f0: f64) -> f64 {
    let f90 = (50.0 * f0).min(1.0);
    let m = (1.0 - vh).clamp(0.0, 1.0);
    let m2 = m * m;
    f0 + (f90 - f0) * m2 * m2 * m
}

/// GGX specular term and its derivative in `α²`, from cosines that are
/// already known to be positive.
pub(crate) fn ggx(a2: f64, nl: f64, nv: f64, nh: f64, vh: f64, f0: f64) -> (f64, f64) {
    let nh2 = nh * nh;
    let t = nh2 * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * t * t);
    let dd = (t - 2.0 * a2 * nh2) / (PI * t * t * t);
    let tan2 = |c: f64| (1.0 - c * c).max(0.0) / (c * c);
    let (ti, to) = (tan2(nl), tan2(nv));
    let (si, so) = (sqrt(1.0 + a2 * ti), sqrt(1.0 + a2 * to));
    let g = 1.0 / (1.0 + 0.5 * (si - 1.0) + 0.5 * (so - 1.0));
    let dg = -g * g * (ti / (4.0 * si) + to / (4.0 * so));
    let k = fresnel(vh, f0) / (4.0 * nl * nv);
    (d * g * k, (dd * g + d * dg) * k)
}

/// Specular value and `∂/∂ρ` for one light direction; zero below either
/// horizon.
pub(crate) fn specular_lobe(rho: f64, n: Vec3, view: Vec3, light: Vec3, f0: f64) -> (f64, f64) {
    let (nl, nv) = (n.dot(light), n.dot(view));
    if nl <= 0.0 || nv <= 0.0 || f0 == 0.0 {
        return (0.0, 0.0);
    }
    let h = (light + view).normalized();
    let a2 = rho * rho * rho * rho;
    let (s, ds) = ggx(a2, nl, nv, n.dot(h).max(0.0), view.dot(h).max(0.0), f0);
    (s, ds * 4.0 * rho * rho * rho)
}

/// Evaluates the BRDF for one direction pair.
pub fn brdf_eval(s: &BrdfSample, opts: &ShadingOptions) -> Result<BrdfValue> {
    opts.check()?;
    check_unit("BRDF normal", s.normal)?;
    check_unit("BRDF view direction", s.view)?;
    check_unit("BRDF light direction", s.light)?;
    check_roughness(s.roughness)?;
    if s.albedo.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("albedo", "non-finite"));
    }
    if s.normal.dot(s.light) <= 0.0 || s.normal.dot(s.view) <= 0.0 {
        return Ok(BrdfValue { rgb: [0.0; 3], d_albedo: 0.0, d_roughness: 0.0 });
    }
    let (spec, ds) = if opts.specular { specular_lobe(s.roughness, s.normal, s.view, s.light, opts.f0) } else { (0.0, 0.0) };
    Ok(BrdfValue { rgb: s.albedo.map(|a| a / PI + spec), d_albedo: 1.0 / PI, d_roughness: ds })
}

/// What a surface point needs for shading. `visibility` has one entry per
/// environment texel.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePayload<'a> {
    pub normal: Vec3,
    pub visibility: &'a [f32],
    pub albedo: [f64; 3],
    pub roughness: f64,
}

/// `Σ_k υ_k L_k max(ω_k·n, 0) Δω_k`: the visible cosine-weighted radiance.
/// Diffuse outgoing radiance is `a/π` times this.
pub fn visible_irradiance(n: Vec3, vis: &[f32], env: &EnvironmentMap, opts: &ShadingOptions) -> [f64; 3] {
    let mut e = [0.0; 3];
    for (k, v) in vis.iter().enumerate() {
        let c = env.direction(k).dot(n);
        if c <= 0.0 || *v <= 0.0 {
            continue;
        }
        let w = *v as f64 * c * if opts.solid_angle { env.solid_angle(k) } else { 1.0 };
        for (ch, ec) in e.iter_mut().enumerate() {
            *ec += w * env.radiance[3 * k + ch] as f64;
        }
    }
    e
}

/// Specular outgoing radiance and its derivative in ρ, per channel.
pub(crate) fn specular_radiance(
    n: Vec3,
    view: Vec3,
    vis: &[f32],
    rho: f64,
    env: &EnvironmentMap,
    opts: &ShadingOptions,
) -> ([f64; 3], [f64; 3]) {
    let (mut s, mut ds) = ([0.0; 3], [0.0; 3]);
    if !opts.specular || opts.f0 == 0.0 || n.dot(view) <= 0.0 {
        return (s, ds);
    }
    for (k, v) in vis.iter().enumerate() {
        let l = env.direction(k);
        let c = l.dot(n);
        if c <= 0.0 || *v <= 0.0 {
            continue;
        }
        let (f, df) = specular_lobe(rho, n, view, l, opts.f0);
        let w = *v as f64 * c * if opts.solid_angle { env.solid_angle(k) } else { 1.0 };
        for ch in 0..3 {
            let li = w * env.radiance[3 * k + ch] as f64;
            s[ch] += f * li;
            ds[ch] += df * li;
        }
    }
    (s, ds)
}

/// Outgoing radiance toward `view` under `env`, single bounce.
pub fn light_transport(p: &SurfacePayload, view: Vec3, env: &EnvironmentMap, opts: &ShadingOptions) -> Result<[f64; 3]> {
    opts.check()?;
    check_unit("surface normal", p.normal)?;
    check_unit("view direction", view)?;
    check_roughness(p.roughness)?;
    if p.visibility.len() != env.len() {
        return Err(Error::shape(
            "light_transport",
            alloc::format!("{} visibility values for {} environment texels", p.visibility.len(), env.len()),
        ));
    }
    if p.normal.dot(view) <= 0.0 {
        return Ok([0.0; 3]);
    }
    let e = visible_irradiance(p.normal, p.visibility, env, opts);
    let (s, _) = specular_radiance(p.normal, view, p.visibility, p.roughness, env, opts);
    Ok(core::array::from_fn(|c| p.albedo[c] / PI * e[c] + s[c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlight::texel_geometry;
    use crate::math::spherical_dir;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit(r: &mut rng::StreamRng) -> Vec3 {
        Vec3::new(rng::normal(r), rng::normal(r), rng::normal(r)).normalized()
    }

    fn upper(r: &mut rng::StreamRng, n: Vec3) -> Vec3 {
        let d = unit(r);
        if d.dot(n) < 0.0 { d * -1.0 } else { d }
    }

    #[test]
    fn zero_albedo_without_fresnel_reflects_nothing() {
        let mut r = rng::stream(1, 0);
        let opts = ShadingOptions { f0: 0.0, ..Default::default() };
        for _ in 0..200 {
            let n = unit(&mut r);
            let (view, light) = (upper(&mut r, n), upper(&mut r, n));
            if n.dot(view) < 0.05 || n.dot(light) < 0.05 {
                continue;
            }
            let s = BrdfSample { albedo: [0.0; 3], roughness: 0.4, normal: n, view, light };
            assert_eq!(brdf_eval(&s, &opts).unwrap().rgb, [0.0; 3]);
        }
    }

    #[test]
    fn diffuse_only_white_is_one_over_pi() {
        let mut r = rng::stream(2, 0);
        for _ in 0..100 {
            let n = unit(&mut r);
            let (view, light) = (upper(&mut r, n), upper(&mut r, n));
            let s = BrdfSample { albedo: [1.0; 3], roughness: 0.2, normal: n, view, light };
            let v = brdf_eval(&s, &ShadingOptions::diffuse_only()).unwrap();
            assert!(v.rgb.iter().all(|c| (c - 1.0 / PI).abs() < 1e-15));
        }
    }

    #[test]
    fn below_horizon_is_zero() {
        let s = BrdfSample { albedo: [1.0; 3], roughness: 0.5, normal: Vec3::Z, view: Vec3::Z, light: Vec3::new(0.0, 0.6, -0.8) };
        assert_eq!(brdf_eval(&s, &ShadingOptions::default()).unwrap().rgb, [0.0; 3]);
    }

    #[test]
    fn non_unit_and_out_of_range_inputs_rejected() {
        let ok = BrdfSample { albedo: [0.5; 3], roughness: 0.5, normal: Vec3::Z, view: Vec3::Z, light: Vec3::Z };
        let o = ShadingOptions::default();
        assert!(brdf_eval(&ok, &o).is_ok());
        assert!(brdf_eval(&BrdfSample { normal: Vec3::new(0.0, 0.0, 1.001), ..ok }, &o).is_err());
        assert!(brdf_eval(&BrdfSample { normal: Vec3::new(0.0, 0.0, 1.00005), ..ok }, &o).is_ok());
        assert!(brdf_eval(&BrdfSample { light: Vec3::ZERO, ..ok }, &o).is_err());
        assert!(brdf_eval(&BrdfSample { roughness: 0.01, ..ok }, &o).is_err());
        assert!(brdf_eval(&BrdfSample { roughness: 1.2, ..ok }, &o).is_err());
        assert!(brdf_eval(&ok, &ShadingOptions { f0: 1.5, ..o }).is_err());
    }

    #[test]
    fn white_furnace_diffuse() {
        let env = EnvironmentMap::constant(16, 32, [1.0; 3]);
        let n = Vec3::Z;
        let mut sum = [0.0; 3];
        for k in 0..env.len() {
            let l = env.direction(k);
            let s = BrdfSample { albedo: [0.5; 3], roughness: 0.5, normal: n, view: n, light: l };
            let v = brdf_eval(&s, &ShadingOptions::diffuse_only()).unwrap();
            for c in 0..3 {
                sum[c] += v.rgb[c] * l.dot(n).max(0.0) * env.solid_angle(k);
            }
        }
        assert!(sum.iter().all(|s| (s - 0.5).abs() < 0.01), "{sum:?}");
        let vis = vec![1.0f32; env.len()];
        let p = SurfacePayload { normal: n, visibility: &vis, albedo: [0.5; 3], roughness: 0.5 };
        let l = light_transport(&p, n, &env, &ShadingOptions::diffuse_only()).unwrap();
        assert!((0..3).all(|c| (l[c] - sum[c]).abs() < 1e-12));
    }

    #[test]
    fn specular_directional_albedo_stays_below_one() {
        // F0 = 1 is the worst case: every microfacet reflects fully. Single
        // scattering loses energy at high roughness, hence the loose floor
        let env = EnvironmentMap::constant(64, 128, [1.0; 3]);
        let opts = ShadingOptions { f0: 1.0, ..Default::default() };
        let vis = vec![1.0f32; env.len()];
        for rho in [0.3, 0.6, 1.0] {
            for theta in [0.0f64, 0.5, 1.0] {
                let view = spherical_dir(theta, 0.3);
                let p = SurfacePayload { normal: Vec3::Z, visibility: &vis, albedo: [0.0; 3], roughness: rho };
                let l = light_transport(&p, view, &env, &opts).unwrap();
                assert!(l[0] <= 1.03 && l[0] > 0.2, "ρ {rho} θ {theta}: {}", l[0]);
            }
        }
    }

    #[test]
    fn fully_shadowed_point_is_black() {
        let env = EnvironmentMap::constant(16, 32, [3.0, 2.0, 1.0]);
        let vis = vec![0.0f32; env.len()];
        let p = SurfacePayload { normal: Vec3::Z, visibility: &vis, albedo: [0.7; 3], roughness: 0.2 };
        assert_eq!(light_transport(&p, Vec3::Z, &env, &ShadingOptions::default()).unwrap(), [0.0; 3]);
    }

    #[test]
    fn single_texel_overhead_lambertian() {
        let g = texel_geometry(16, 32);
        let k = 5; // top row
        let mut rad = vec![0.0f32; 3 * g.directions.len()];
        rad[3 * k..3 * k + 3].copy_from_slice(&[1.0; 3]);
        let env = EnvironmentMap::new(16, 32, rad).unwrap();
        let n = env.direction(k);
        let vis = vec![1.0f32; env.len()];
        let p = SurfacePayload { normal: n, visibility: &vis, albedo: [1.0; 3], roughness: 0.5 };
        let l = light_transport(&p, n, &env, &ShadingOptions::diffuse_only()).unwrap();
        let want = env.solid_angle(k) / PI;
        assert!(l.iter().all(|c| (c - want).abs() < 1e-6), "{l:?} vs {want}");
    }

    #[test]
    fn solid_angle_flag_switches_quadrature_weights() {
        let env = EnvironmentMap::constant(8, 16, [1.0; 3]);
        let vis = vec![1.0f32; env.len()];
        let opts = ShadingOptions { solid_angle: false, ..ShadingOptions::diffuse_only() };
        let e = visible_irradiance(Vec3::Z, &vis, &env, &opts);
        let want: f64 = (0..env.len()).map(|k| env.direction(k).z.max(0.0)).sum();
        assert!((e[0] - want).abs() < 1e-12);
    }

    #[test]
    fn visibility_length_checked() {
        let env = EnvironmentMap::constant(8, 16, [1.0; 3]);
        let vis = vec![1.0f32; 3];
        let p = SurfacePayload { normal: Vec3::Z, visibility: &vis, albedo: [0.5; 3], roughness: 0.5 };
        assert!(light_transport(&p, Vec3::Z, &env, &ShadingOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn specular_is_reciprocal(seed in 0u64..100_000, rho in RHO_MIN..1.0f64) {
            let mut r = rng::stream(seed, 1);
            let n = unit(&mut r);
            let (a, b) = (upper(&mut r, n), upper(&mut r, n));
            let (x, _) = specular_lobe(rho, n, a, b, DEFAULT_F0);
            let (y, _) = specular_lobe(rho, n, b, a, DEFAULT_F0);
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }

        #[test]
        fn brdf_is_non_negative(seed in 0u64..100_000, rho in RHO_MIN..1.0f64, a in 0.0..1.0f64) {
            let mut r = rng::stream(seed, 2);
            let n = unit(&mut r);
            let s = BrdfSample { albedo: [a; 3], roughness: rho, normal: n, view: unit(&mut r), light: unit(&mut r) };
            let v = brdf_eval(&s, &ShadingOptions::default()).unwrap();
            prop_assert!(v.rgb.iter().all(|c| *c >= 0.0 && c.is_finite()));
        }

        #[test]
        fn roughness_derivative_matches_differences(seed in 0u64..100_000, rho in 0.05..0.95f64) {
            let mut r = rng::stream(seed, 3);
            let n = unit(&mut r);
            let (view, light) = (upper(&mut r, n), upper(&mut r, n));
            prop_assume!(n.dot(view) > 0.05 && n.dot(light) > 0.05);
            let h = 1e-6;
            let (_, ds) = specular_lobe(rho, n, view, light, DEFAULT_F0);
            let fd = (specular_lobe(rho + h, n, view, light, DEFAULT_F0).0 - specular_lobe(rho - h, n, view, light, DEFAULT_F0).0) / (2.0 * h);
            prop_assert!((ds - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "{} vs {}", ds, fd);
        }

        #[test]
        fn energy_bounded_without_fresnel(seed in 0u64..100_000, rho in RHO_MIN..1.0f64, a in 0.0..1.0f64) {
            // F0 = 0 leaves the diffuse lobe, whose hemisphere integral is a
            let env = EnvironmentMap::constant(16, 32, [1.0; 3]);
            let vis = vec![1.0f32; env.len()];
            let mut r = rng::stream(seed, 4);
            let n = unit(&mut r);
            let view = upper(&mut r, n);
            let p = SurfacePayload { normal: n, visibility: &vis, albedo: [a; 3], roughness: rho };
            let l = light_transport(&p, view, &env, &ShadingOptions { f0: 0.0, ..Default::default() }).unwrap();
            prop_assert!(l.iter().all(|c| *c <= 1.03));
        }
    }
}
