//! Relit images from the learned decomposition.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::rays::{prepare_rays, FrameSupport, RayConfig, RaySamples, RelightFrame};
use super::{albedo_from_pre, param_vars, roughness_from_pre, FeatureUVMap, MaterialMaps, UVDeltaNet};
use crate::autodiff::{taps, Graph, Tensor, TexelSupport, Var};
use crate::body::ProxyMesh;
use crate::camera::Camera;
use crate::density::DensityField;
use crate::envlight::EnvironmentMap;
use crate::image::Image;
use crate::math::{Vec3, PI};
use crate::shading::{specular_radiance, visible_irradiance, ShadingOptions};
use crate::{par, Error, Result};

/// Everything learned that a relit render reads. Materials are shared by
/// all frames.
#[derive(Clone, Copy, Debug)]
pub struct RelightModel<'a> {
    pub field: &'a DensityField,
    pub materials: &'a MaterialMaps,
    pub uv_delta: &'a UVDeltaNet,
    pub features: &'a FeatureUVMap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderSettings {
    pub rays: RayConfig,
    pub shading: ShadingOptions,
}

pub(crate) fn check_model(m: &RelightModel) -> Result<()> {
    if m.uv_delta.feature_dim != m.features.dim() {
        return Err(Error::shape(
            "relight model",
            alloc::format!("UV-offset net expects {} features, grid has {}", m.uv_delta.feature_dim, m.features.dim()),
        ));
    }
    Ok(())
}

/// Chart rectangle of each sample label, as f32 `[u0, v0, u1, v1]`.
pub(crate) fn rects(mesh: &ProxyMesh, labels: &[u16]) -> Vec<[f32; 4]> {
    labels.iter().map(|l| mesh.charts[*l as usize - 1].rect.map(|x| x as f32)).collect()
}

/// Records `ε` (`[S, 2]`) for the samples.
#[allow(clippy::too_many_arguments)]
pub(crate) fn record_offsets(
    g: &mut Graph,
    net: &UVDeltaNet,
    net_vars: &[Var],
    features: Var,
    feature_support: &TexelSupport,
    uvh: &[[f32; 3]],
    labels: &[u16],
) -> Result<Var> {
    let s = uvh.len();
    let uv = g.constant(Tensor::new(&[s, 2], uvh.iter().flat_map(|p| [p[0], p[1]]).collect())?);
    let psi = g.grid_sample(features, uv, Some((feature_support, labels)))?;
    let pos = uvh.iter().flat_map(|p| [2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0, p[2]]).collect();
    let pos = g.constant(Tensor::new(&[s, 3], pos)?);
    let x = g.concat(&[pos, psi], 1)?;
    net.record(g, net_vars, x)
}

/// Clamps each row `(u, v)` of `x` into its chart rectangle.
pub(crate) fn clamp_to_rects(g: &mut Graph, x: Var, rects: &[[f32; 4]]) -> Var {
    let xd = g.data(x).to_vec();
    let mut pass = vec![0.0f32; xd.len()];
    let mut out = xd.clone();
    let mut sides = Vec::with_capacity(xd.len());
    for (i, r) in rects.iter().enumerate() {
        for a in 0..2 {
            let (lo, hi) = (r[a], r[a + 2]);
            let v = xd[2 * i + a];
            let (o, p, side) = if v < lo { (lo, 0.0, 0) } else if v > hi { (hi, 0.0, 2) } else { (v, 1.0, 1) };
            out[2 * i + a] = o;
            pass[2 * i + a] = p;
            sides.push(side);
        }
    }
    g.note_branches(sides.into_iter());
    let t = Tensor::new(&[rects.len(), 2], out).expect("shape");
    g.custom(&[x], t, Box::new(move |_, gr, _| vec![Some(gr.iter().zip(&pass).map(|(a, b)| a * b).collect())]))
}

/// UV offsets of every sample, without recording gradients.
pub(crate) fn eval_offsets(
    net: &UVDeltaNet,
    features: &FeatureUVMap,
    feature_support: &TexelSupport,
    uvh: &[[f32; 3]],
    labels: &[u16],
) -> Result<Vec<[f32; 2]>> {
    const CHUNK: usize = 4096;
    let mut out = Vec::with_capacity(uvh.len());
    for start in (0..uvh.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(uvh.len());
        let mut g = Graph::new();
        let mut nv = param_vars(&mut g, &net.params);
        // plain constants; nothing here needs a gradient
        for (i, v) in nv.iter_mut().enumerate() {
            *v = g.constant(net.params.get(crate::autodiff::ParamId(i)).clone());
        }
        let f = g.constant(features.params.get(features.id()).clone());
        let e = record_offsets(&mut g, net, &nv, f, feature_support, &uvh[start..end], &labels[start..end])?;
        out.extend(g.data(e).chunks(2).map(|c| [c[0], c[1]]));
    }
    Ok(out)
}

/// Lookup taps into the material maps for each sample, after the offset and
/// the chart clamp.
pub(crate) fn material_taps(
    mesh: &ProxyMesh,
    support: &TexelSupport,
    rays: &RaySamples,
    offsets: &[[f32; 2]],
) -> Vec<([usize; 4], [f64; 4])> {
    let rs = rects(mesh, &rays.label);
    (0..rays.len())
        .map(|s| {
            let r = rs[s];
            let u = (rays.uvh[s][0] + offsets[s][0]).clamp(r[0], r[2]);
            let v = (rays.uvh[s][1] + offsets[s][1]).clamp(r[1], r[3]);
            let t = taps(support.height, support.width, u as f64, v as f64, Some((support, rays.label[s])));
            (t.idx, t.w)
        })
        .collect()
}

struct Prepared {
    rays: RaySamples,
    taps: Vec<([usize; 4], [f64; 4])>,
    pixels: Vec<usize>,
}

fn prepare(
    model: &RelightModel,
    frame: &RelightFrame,
    env_len: usize,
    camera: &Camera,
    pixels: Option<&[usize]>,
    settings: &RenderSettings,
) -> Result<Prepared> {
    check_model(model)?;
    let maps = frame.checked_maps(env_len)?;
    let sup = FrameSupport::new(frame, maps);
    let pixels: Vec<usize> = pixels.map_or_else(|| (0..camera.width * camera.height).collect(), <[usize]>::to_vec);
    let rays = prepare_rays(model.field, frame, maps, &sup, camera, &pixels, &settings.rays, 0)?;
    let mesh = &frame.shell.body.mesh;
    let fsup = mesh.texel_support(model.features.resolution());
    let eps = eval_offsets(model.uv_delta, model.features, &fsup, &rays.uvh, &rays.label)?;
    let msup = mesh.texel_support(model.materials.resolution());
    let taps = material_taps(mesh, &msup, &rays, &eps);
    Ok(Prepared { rays, taps, pixels })
}

/// Renders `pixels` of `camera` (all of them when `None`) under `env`.
/// Pixels left out stay black.
pub fn relight_render(
    model: &RelightModel,
    frame: &RelightFrame,
    env: &EnvironmentMap,
    camera: &Camera,
    pixels: Option<&[usize]>,
    settings: &RenderSettings,
) -> Result<Image> {
    let p = prepare(model, frame, env.len(), camera, pixels, settings)?;
    let vis_map = &frame.checked_maps(env.len())?.visibility;
    let (a_pre, r_pre) = (model.materials.albedo_pre(), model.materials.roughness_pre());
    let opts = settings.shading;
    let radiance: Vec<[f64; 3]> = par::map_range(p.rays.len(), |s| {
        let (n, view) = (p.rays.normal[s], p.rays.view[s]);
        if n.dot(view) <= 0.0 {
            return [0.0; 3];
        }
        let (idx, w) = p.taps[s];
        let mut a = [0.0f64; 3];
        let mut rho = 0.0f64;
        for t in 0..4 {
            for c in 0..3 {
                a[c] += w[t] * albedo_from_pre(a_pre[3 * idx[t] + c]) as f64;
            }
            rho += w[t] * roughness_from_pre(r_pre[idx[t]]) as f64;
        }
        shade(n, view, &p.rays.visibility(s, vis_map), a, rho, env, &opts)
    });
    let mut img = Image::zeros(camera.width, camera.height, 3);
    for (r, px) in p.pixels.iter().enumerate() {
        let mut acc = [0.0f64; 3];
        for s in p.rays.offsets[r]..p.rays.offsets[r + 1] {
            let w = p.rays.weight[s] as f64;
            for c in 0..3 {
                acc[c] += w * radiance[s][c];
            }
        }
        img.pixel_mut(px % camera.width, px / camera.width).copy_from_slice(&acc.map(|v| v as f32));
    }
    Ok(img)
}

pub(crate) fn shade(n: Vec3, view: Vec3, vis: &[f32], a: [f64; 3], rho: f64, env: &EnvironmentMap, opts: &ShadingOptions) -> [f64; 3] {
    if n.dot(view) <= 0.0 {
        return [0.0; 3];
    }
    let e = visible_irradiance(n, vis, env, opts);
    let (s, _) = specular_radiance(n, view, vis, rho, env, opts);
    core::array::from_fn(|c| a[c] / PI * e[c] + s[c])
}

/// Pixels of a render whose material lookups touch a texel flagged in
/// `mask` (a raster at the material resolution). An edit confined to the
/// mask can only change these pixels.
pub fn material_footprint(
    model: &RelightModel,
    frame: &RelightFrame,
    env: &EnvironmentMap,
    camera: &Camera,
    mask: &[bool],
    settings: &RenderSettings,
) -> Result<Vec<bool>> {
    let res = model.materials.resolution();
    if mask.len() != res * res {
        return Err(Error::shape("material_footprint", alloc::format!("{} mask flags for {res}² maps", mask.len())));
    }
    let p = prepare(model, frame, env.len(), camera, None, settings)?;
    let mut out = vec![false; camera.width * camera.height];
    for (r, px) in p.pixels.iter().enumerate() {
        out[*px] = (p.rays.offsets[r]..p.rays.offsets[r + 1])
            .any(|s| (0..4).any(|t| p.taps[s].1[t] != 0.0 && mask[p.taps[s].0[t]]));
    }
    Ok(out)
}
