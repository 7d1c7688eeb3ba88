//! The learning pipeline in memory: geometry from multi-view masks and
//! images, baked and densified UV maps per pose, then the material
//! decomposition and relit renders. Each CLI stage is a thin file wrapper
//! around one of these functions, and the acceptance suite calls them
//! directly.

use std::sync::Arc;

use uvrelight_core::autodiff::TexelSupport;
use uvrelight_core::body::{BodyConfig, Pose, PosedBody, ProxyMesh};
use uvrelight_core::camera::Camera;
use uvrelight_core::density::{
    evaluate_geometry, prepare_geometry, train_geometry, DensityField, EpochStats, GeometryView, Shell, VoxelGrid,
};
use uvrelight_core::envlight::{texel_geometry, EnvironmentMap};
use uvrelight_core::geomaps::{bake_pose_maps, PoseMaps};
use uvrelight_core::image::Image;
use uvrelight_core::inpaint::{
    inpaint_forward, morph_inpaint, train_inpainter, visible_texels, DenseUVMap, InpaintDataset, InpaintInputs,
    InpaintNetConfig, InpaintSample, InpaintTrainLog, TrainedInpainter,
};
use uvrelight_core::relight::{
    relight_render, train_decomposition, DecompositionLog, DecompositionView, DenseMaps, EpochMetrics, FeatureUVMap,
    MaterialMaps, RelightFrame, RelightModel, UVDeltaNet, FEATURE_DIM,
};
use uvrelight_core::rng;

use crate::config::RunConfig;
use crate::scene::{generate_poses, SyntheticScene};
use crate::{Error, Result};

pub fn posed_bodies(mesh: &Arc<ProxyMesh>, poses: &[Pose]) -> Result<Vec<Arc<PosedBody>>> {
    poses.iter().map(|p| Ok(Arc::new(PosedBody::new(mesh.clone(), p)?))).collect()
}

pub fn shells(mesh: &Arc<ProxyMesh>, poses: &[Pose]) -> Result<Vec<Shell>> {
    Ok(posed_bodies(mesh, poses)?.into_iter().map(Shell::new).collect())
}

/// A voxel field over the canonical box. With a positive
/// `geometry.init_sharpness` it starts from the proxy capsules' signed
/// distance; the proxy is the template the field refines.
pub fn init_field(mesh: &ProxyMesh, body: &BodyConfig, cfg: &RunConfig) -> Result<DensityField> {
    let g = &cfg.geometry;
    let dims = VoxelGrid::dims_for(mesh.canonical_box.extent(), g.voxel_spacing);
    let mut grid = VoxelGrid::new(dims, VoxelGrid::DEFAULT_DENSITY_SCALE, VoxelGrid::DEFAULT_COLOR_SCALE)?;
    if g.init_sharpness > 0.0 {
        grid.init_from_sdf(|c| body.rest_sdf(mesh.denormalize_canonical(c)), g.init_sharpness, 0.0);
    }
    Ok(DensityField::Voxel(grid))
}

#[derive(Clone, Debug)]
pub struct GeometryRun {
    pub before: EpochStats,
    pub after: EpochStats,
    pub epochs: Vec<EpochStats>,
}

/// Trains `field` on views whose `pose` indexes `shells`.
pub fn fit_geometry(
    field: &mut DensityField,
    shells: &[Shell],
    views: &[GeometryView],
    cfg: &RunConfig,
    on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<GeometryRun> {
    let tc = cfg.geometry_train();
    let data = prepare_geometry(shells, views, &tc)?;
    let before = evaluate_geometry(field, &data, &tc)?;
    let epochs = train_geometry(field, &data, &tc, on_epoch)?;
    let after = evaluate_geometry(field, &data, &tc)?;
    Ok(GeometryRun { before, after, epochs })
}

/// Rig cameras used for baking: all, or `bake.views` spread evenly.
pub fn bake_cameras(cameras: &[Camera], cfg: &RunConfig) -> Vec<Camera> {
    let n = cfg.bake.views;
    if n == 0 || n >= cameras.len() {
        return cameras.to_vec();
    }
    (0..n).map(|k| cameras[k * cameras.len() / n].clone()).collect()
}

pub fn bake(field: &DensityField, shell: &Shell, cameras: &[Camera], cfg: &RunConfig) -> Result<PoseMaps> {
    let env = texel_geometry(cfg.scene.env_height, cfg.scene.env_width);
    Ok(bake_pose_maps(field, shell, cameras, &env, &cfg.bake_config())?)
}

/// Trained densifiers; `None` falls back to region growing.
#[derive(Clone, Debug, Default)]
pub struct Inpainters {
    pub normal: Option<TrainedInpainter>,
    pub visibility: Option<TrainedInpainter>,
}

/// Normals at a coarser resolution: the renormalized mean of each block of
/// valid texels sharing the target texel's chart.
pub fn downsample_normals(n: &DenseUVMap, support: &TexelSupport, fine: &TexelSupport) -> Result<DenseUVMap> {
    let (res, f) = (support.height, n.height / support.height);
    if f == 0 || n.height != f * support.height || n.width != f * support.width || fine.height != n.height {
        return Err(Error::Input(format!("cannot reduce a {}² normal map to {}²", n.height, res)));
    }
    Ok(DenseUVMap::from_support(support, 3, |i, j| {
        let label = support.labels[i * support.width + j];
        let mut acc = [0.0f64; 3];
        for y in i * f..(i + 1) * f {
            for x in j * f..(j + 1) * f {
                let k = y * n.width + x;
                if n.valid[k] && fine.labels[k] == label {
                    for c in 0..3 {
                        acc[c] += n.values[3 * k + c] as f64;
                    }
                }
            }
        }
        let len = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
        (len > 1e-9).then(|| acc.iter().map(|a| (a / len) as f32).collect())
    })?)
}

/// Dense normal and visibility maps from one pose's bake.
pub fn densify(maps: &PoseMaps, mesh: &ProxyMesh, nets: &Inpainters, cfg: &RunConfig) -> Result<DenseMaps> {
    let nsup = mesh.texel_support(maps.normals.height);
    let vsup = mesh.texel_support(maps.visibility.height);
    let iters = cfg.inpaint.morph_iterations;
    let sparse_n = DenseUVMap::from_sparse(&maps.normals);
    let normals = match &nets.normal {
        Some(net) => inpaint_forward(net, InpaintInputs::Normals { sparse: &sparse_n }, &nsup)?,
        None => morph_inpaint(&sparse_n, &nsup, iters, true)?.map,
    };
    let sparse_v = DenseUVMap::from_sparse(&maps.visibility);
    let visibility = match &nets.visibility {
        Some(net) => {
            let coarse = downsample_normals(&normals, &vsup, &nsup)?;
            let dirs = texel_geometry(cfg.scene.env_height, cfg.scene.env_width).directions;
            let inputs = InpaintInputs::Visibility { sparse: &sparse_v, normals: &coarse, directions: &dirs };
            inpaint_forward(net, inputs, &vsup)?
        }
        None => morph_inpaint(&sparse_v, &vsup, iters, false)?.map,
    };
    Ok(DenseMaps { normals, visibility })
}

/// Simulated training pairs for the densifiers: random poses of the proxy,
/// exact texel normals and visibility as targets, and the coverage of a few
/// random rig-camera subsets as input masks.
pub fn inpaint_datasets(mesh: &Arc<ProxyMesh>, cameras: &[Camera], cfg: &RunConfig) -> Result<(InpaintDataset, InpaintDataset)> {
    let ic = &cfg.inpaint;
    let (nres, vres) = (cfg.bake.normal_res, cfg.bake.visibility_res);
    let (nsup, vsup) = (mesh.texel_support(nres), mesh.texel_support(vres));
    let dirs = texel_geometry(cfg.scene.env_height, cfg.scene.env_width).directions;
    // a seed stream of their own, so these poses never coincide with the scene's
    let poses = generate_poses(cfg.scene.body, ic.poses, cfg.scene.pose_amplitude, cfg.seed ^ 0x1a9a_0000);
    let mut r = rng::stream(cfg.seed, 0x1a9b);
    let (mut ns, mut vs) = (Vec::new(), Vec::new());
    for pose in &poses {
        let body = PosedBody::new(mesh.clone(), pose)?;
        let tn = body.texel_normals(nres);
        let ntarget = DenseUVMap::from_support(&nsup, 3, |i, j| tn[i * nres + j].map(|v| v.to_f32().to_vec()))?;
        let tv = body.texel_visibility(vres, &dirs, crate::scene::SHADOW_LIFT);
        let vtarget = DenseUVMap::from_support(&vsup, dirs.len(), |i, j| tv[i * vres + j].clone())?;
        let tn_coarse = body.texel_normals(vres);
        let vnormals = DenseUVMap::from_support(&vsup, 3, |i, j| tn_coarse[i * vres + j].map(|v| v.to_f32().to_vec()))?;
        for _ in 0..ic.masks_per_pose {
            let pick: Vec<Camera> = rng::permutation(&mut r, cameras.len())
                .into_iter()
                .take(ic.mask_cameras.min(cameras.len()))
                .map(|i| cameras[i].clone())
                .collect();
            let nm = visible_texels(&body, &pick, nres, 0.25);
            let vm = visible_texels(&body, &pick, vres, 0.25);
            ns.push(InpaintSample { target: ntarget.clone(), input_mask: nm, normals: None });
            vs.push(InpaintSample { target: vtarget.clone(), input_mask: vm, normals: Some(vnormals.clone()) });
        }
    }
    Ok((
        InpaintDataset { support: nsup, directions: Vec::new(), samples: ns },
        InpaintDataset { support: vsup, directions: dirs, samples: vs },
    ))
}

pub struct InpaintRun {
    pub nets: Inpainters,
    pub normal_log: InpaintTrainLog,
    pub visibility_log: InpaintTrainLog,
}

pub fn train_inpainters(
    mesh: &Arc<ProxyMesh>,
    cameras: &[Camera],
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&str, usize, f64),
) -> Result<InpaintRun> {
    let (nd, vd) = inpaint_datasets(mesh, cameras, cfg)?;
    let tc = cfg.inpaint_train();
    let mut normal = TrainedInpainter::new(InpaintNetConfig::normal_net(cfg.inpaint.normal_width), cfg.seed)?;
    let normal_log = train_inpainter(&mut normal, &nd, &tc, |e, l| on_epoch("normal", e, l))?;
    let mut vis = TrainedInpainter::new(InpaintNetConfig::visibility_net(cfg.inpaint.visibility_width), cfg.seed + 1)?;
    let visibility_log = train_inpainter(&mut vis, &vd, &tc, |e, l| on_epoch("visibility", e, l))?;
    Ok(InpaintRun { nets: Inpainters { normal: Some(normal), visibility: Some(vis) }, normal_log, visibility_log })
}

/// Everything the decomposition learns.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub materials: MaterialMaps,
    pub uv_delta: UVDeltaNet,
    pub features: FeatureUVMap,
}

impl Decomposition {
    /// Mid-gray albedo, mid roughness, a fresh offset net and feature grid.
    pub fn initial(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.decompose;
        Ok(Self {
            materials: MaterialMaps::constant(cfg.scene.material_res, [0.5; 3], 0.6)?,
            uv_delta: UVDeltaNet::new(&d.hidden, FEATURE_DIM, cfg.seed)?,
            features: FeatureUVMap::new(d.feature_res, FEATURE_DIM, cfg.seed)?,
        })
    }

    pub fn model<'a>(&'a self, field: &'a DensityField) -> RelightModel<'a> {
        RelightModel { field, materials: &self.materials, uv_delta: &self.uv_delta, features: &self.features }
    }
}

/// A frame with its dense maps and a cached coarse density grid.
pub fn frame(id: &str, field: &DensityField, shell: Shell, maps: DenseMaps, cfg: &RunConfig) -> Result<RelightFrame> {
    let mut f = RelightFrame::new(id, shell, Some(maps));
    f.cache_coarse(field, cfg.decompose.coarse_spacing)?;
    Ok(f)
}

pub fn decompose(
    field: &DensityField,
    frames: &[RelightFrame],
    envs: &[EnvironmentMap],
    views: &[DecompositionView],
    model: &mut Decomposition,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<DecompositionLog> {
    let dc = cfg.decomposition();
    let Decomposition { materials, uv_delta, features } = model;
    Ok(train_decomposition(field, frames, envs, views, materials, uv_delta, features, &dc, |m, _, _, _| on_epoch(m))?)
}

pub fn render(
    field: &DensityField,
    model: &Decomposition,
    frame: &RelightFrame,
    env: &EnvironmentMap,
    camera: &Camera,
    cfg: &RunConfig,
) -> Result<Image> {
    Ok(relight_render(&model.model(field), frame, env, camera, None, &cfg.render_settings())?)
}

/// Timings and scores of [`run_synthetic`].
#[derive(Clone, Debug, Default)]
pub struct EndToEnd {
    pub geometry: Option<GeometryRun>,
    pub normal_coverage: Vec<f64>,
    pub visibility_coverage: Vec<f64>,
    pub decomposition: DecompositionLog,
    /// Albedo PSNR over texels the training views saw.
    pub albedo_psnr: f64,
    pub covered_texels: usize,
    /// Per held-out view: (PSNR, SSIM) of the relit render against the oracle.
    pub held_out: Vec<(f64, f64)>,
    pub renders: Vec<Image>,
    pub seconds: Vec<(String, f64)>,
}

/// The whole pipeline on a synthetic scene: geometry, bake and densify
/// every pose, decompose on the training views, relight the held-out pose
/// under the held-out environment from the held-out cameras.
pub fn run_synthetic(
    scene: &SyntheticScene,
    cfg: &RunConfig,
    nets: &Inpainters,
    mut log: impl FnMut(&str),
) -> Result<(EndToEnd, DensityField, Decomposition)> {
    use crate::scene::Split;
    use std::time::Instant;
    let mut out = EndToEnd::default();
    let mut clock = Instant::now();
    let mut lap = |name: &str, out: &mut EndToEnd| {
        out.seconds.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let shells = shells(&scene.mesh, &scene.poses)?;
    let mut field = init_field(&scene.mesh, &crate::scene::body_config(scene.config.body), cfg)?;
    let gviews: Vec<GeometryView> = scene
        .views_of(Split::Train)
        .map(|v| GeometryView { pose: v.pose, camera: v.camera.clone(), image: v.image.clone(), mask: v.mask.clone() })
        .collect();
    if cfg.geometry.epochs > 0 {
        let g = fit_geometry(&mut field, &shells, &gviews, cfg, |e, s| log(&format!("geometry epoch {e}: loss {:.5} l2 {:.6}", s.loss, s.l2)))?;
        out.geometry = Some(g);
    }
    lap("geometry", &mut out);
    let cams = bake_cameras(&scene.rig.cameras, cfg);
    let mut frames = Vec::new();
    for (p, shell) in shells.iter().enumerate() {
        let maps = bake(&field, shell, &cams, cfg)?;
        log(&format!("pose {p}: normal coverage {:.3}, visibility coverage {:.3}", maps.normal_coverage, maps.visibility_coverage));
        out.normal_coverage.push(maps.normal_coverage);
        out.visibility_coverage.push(maps.visibility_coverage);
        let dense = densify(&maps, &scene.mesh, nets, cfg)?;
        frames.push(frame(&format!("pose_{p}"), &field, shell.clone(), dense, cfg)?);
    }
    lap("bake", &mut out);
    let envs = vec![scene.train_env.clone(), scene.held_out_env.clone()];
    let views: Vec<DecompositionView> = scene
        .views_of(Split::Train)
        .map(|v| DecompositionView { frame: v.pose, env: 0, camera: v.camera.clone(), image: v.image.clone() })
        .collect();
    let mut model = Decomposition::initial(cfg)?;
    out.decomposition = decompose(&field, &frames, &envs, &views, &mut model, cfg, |m| {
        log(&format!("decompose epoch {}: loss {:.5} l2 {:.6} frozen {}", m.epoch, m.loss, m.l2, m.frozen))
    })?;
    lap("decompose", &mut out);
    let (psnr, covered) = albedo_psnr(&model.materials, &scene.materials.albedo, &out.decomposition.coverage);
    out.albedo_psnr = psnr;
    out.covered_texels = covered;
    for v in scene.views_of(Split::HeldOut) {
        let img = render(&field, &model, &frames[v.pose], &scene.held_out_env, &v.camera, cfg)?;
        let p = uvrelight_core::metrics::psnr(&img, &v.image)?;
        let s = uvrelight_core::metrics::ssim(&img, &v.image)?;
        log(&format!("{}: PSNR {p:.2} dB, SSIM {s:.4}", v.name));
        out.held_out.push((p, s));
        out.renders.push(img);
    }
    lap("relight", &mut out);
    Ok((out, field, model))
}

/// PSNR of recovered albedo against the truth over texels with positive
/// training coverage, and how many texels that is.
pub fn albedo_psnr(materials: &MaterialMaps, truth: &[f32], coverage: &[f32]) -> (f64, usize) {
    let a = materials.albedo();
    let (mut se, mut n) = (0.0f64, 0usize);
    for (k, c) in coverage.iter().enumerate() {
        if *c > 0.0 {
            for ch in 0..3 {
                let d = (a[3 * k + ch] - truth[3 * k + ch]) as f64;
                se += d * d;
            }
            n += 1;
        }
    }
    if n == 0 {
        return (0.0, 0);
    }
    (uvrelight_core::metrics::psnr_from_mse(se / (3 * n) as f64), n)
}

/// Fixed-seed synthetic views for quick checks of a pose's rig coverage.
pub fn rig_coverage(body: &PosedBody, cameras: &[Camera], res: usize) -> f64 {
    let seen = visible_texels(body, cameras, res, 0.25);
    let sup = body.mesh.texel_support(res);
    let total = sup.labels.iter().filter(|l| **l != 0).count();
    seen.iter().filter(|s| **s).count() as f64 / total.max(1) as f64
}
