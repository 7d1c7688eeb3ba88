//! The `uvrelight` command line. Every command writes into its own folder
//! `<run>/<command>/` (gen-scene writes the dataset folder instead) and ends
//! with a `manifest.json` listing what it read and wrote.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use uvrelight_core::autodiff::ParamSet;
use uvrelight_core::camera::Camera;
use uvrelight_core::density::{DensityField, GeometryView};
use uvrelight_core::envlight::{hdr_merge, sphere_unwrap, EnvironmentMap, ExposureStack, ProbeView};
use uvrelight_core::geomaps::PoseMaps;
use uvrelight_core::image::Image;
use uvrelight_core::inpaint::TrainedInpainter;
use uvrelight_core::math::Vec3;
use uvrelight_core::metrics;
use uvrelight_core::relight::{edit_materials, DecompositionView, DenseMaps, FeatureUVMap, MaterialEdit, MaterialMaps, UVDeltaNet};

use crate::codec::{ckpt, maps, pfm, png, suffixed, text, write_file};
use crate::config::RunConfig;
use crate::dataset::{self, read_env, read_scene, write_env, write_scene};
use crate::manifest::{self, Manifest};
use crate::pipeline::{self, Decomposition, Inpainters};
use crate::scene::{body_config, Split, SyntheticScene};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "uvrelight", version, about = "Relightable human capture on a UV-parameterized density field")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML). Defaults to the dataset's own config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory; each command writes to `<run>/<command>/`.
    #[arg(long, global = true)]
    pub run: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DatasetArg {
    /// Dataset written by `gen-scene`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Merge an exposure stack into one linear radiance image.
    Hdrmerge {
        #[command(flatten)]
        common: Common,
        /// `PATH@SECONDS`, one per exposure (PFM, or 8-bit PNG decoded with gamma 2.2).
        #[arg(long = "exposure", required = true)]
        exposures: Vec<String>,
        #[arg(long, default_value = "radiance")]
        name: String,
    },
    /// Unwrap mirror-sphere shots into a lat-long environment map.
    ProbeUnwrap {
        #[command(flatten)]
        common: Common,
        /// `PATH@CX,CY,RADIUS,DX,DY,DZ`: sphere centre and radius in pixels,
        /// viewing direction in world space.
        #[arg(long = "shot", required = true)]
        shots: Vec<String>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Normals this close to the silhouette are ignored, degrees.
        #[arg(long, default_value_t = 5.0)]
        rim_deg: f64,
        #[arg(long, default_value = "env")]
        name: String,
    },
    /// Render a synthetic actor and write the dataset.
    GenScene {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; defaults to `paths.dataset` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the density field to the training views.
    TrainGeometry {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Bake sparse normal and visibility maps for every pose.
    BakeMaps {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        /// Density checkpoint; defaults to `<run>/train-geometry/field.ckpt`.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Number of rig cameras to bake from (0 = all).
        #[arg(long)]
        views: Option<usize>,
    },
    /// Train the normal and visibility densifiers on simulated coverage.
    TrainInpaint {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recover albedo and roughness from the training views.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        field: Option<PathBuf>,
        /// Output of `bake-maps`; defaults to `<run>/bake-maps`.
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Output of `train-inpaint`; without it, sparse maps are filled by
        /// region growing.
        #[arg(long)]
        inpaint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render the actor under a new environment.
    Relight {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        field: Option<PathBuf>,
        /// Output of `decompose`; defaults to `<run>/decompose`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Material checkpoint replacing the decomposed one (e.g. from `edit`).
        #[arg(long)]
        materials: Option<PathBuf>,
        /// Environment PFM; defaults to the dataset's held-out environment.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Pose index; defaults to the first held-out pose.
        #[arg(long)]
        pose: Option<usize>,
        /// Camera files; default to the dataset's held-out cameras.
        #[arg(long = "camera")]
        cameras: Vec<PathBuf>,
    },
    /// Overwrite albedo and/or roughness inside a UV mask.
    Edit {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<run>/decompose/materials.ckpt`.
        #[arg(long)]
        materials: Option<PathBuf>,
        /// 1-bit PNG at material resolution; white texels are edited.
        #[arg(long)]
        mask: PathBuf,
        /// `R,G,B` in linear units.
        #[arg(long)]
        albedo: Option<String>,
        #[arg(long)]
        roughness: Option<f32>,
    },
    /// PSNR and SSIM of a render against a reference (both PFM).
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "metrics")]
        name: String,
    },
}

/// Entry point for `main`: 0 on success, else prints one JSON error line on
/// stderr and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            let e = Error::Input(first.to_string());
            eprintln!("{}", e.to_line());
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Hdrmerge { common, exposures, name } => hdrmerge_cmd(&common, &exposures, &name),
        Command::ProbeUnwrap { common, shots, height, width, rim_deg, name } => {
            probe_unwrap_cmd(&common, &shots, height, width, rim_deg, &name)
        }
        Command::GenScene { common, out } => gen_scene_cmd(&common, out),
        Command::TrainGeometry { common, data, epochs } => train_geometry_cmd(&common, &data, epochs),
        Command::BakeMaps { common, data, field, views } => bake_maps_cmd(&common, &data, field, views),
        Command::TrainInpaint { common, data, epochs } => train_inpaint_cmd(&common, &data, epochs),
        Command::Decompose { common, data, field, maps, inpaint, epochs } => {
            decompose_cmd(&common, &data, field, maps, inpaint, epochs)
        }
        Command::Relight { common, data, field, checkpoint, materials, env, pose, cameras } => {
            relight_cmd(&common, &data, field, checkpoint, materials, env, pose, &cameras)
        }
        Command::Edit { common, materials, mask, albedo, roughness } => {
            edit_cmd(&common, materials, &mask, albedo.as_deref(), roughness)
        }
        Command::Metrics { common, pred, target, name } => metrics_cmd(&common, &pred, &target, &name),
    }
}

/// The configuration a command runs with and the files it came from.
struct Setup {
    cfg: RunConfig,
    inputs: Vec<PathBuf>,
}

fn setup(common: &Common, dataset: Option<&Path>) -> Result<Setup> {
    let mut inputs = Vec::new();
    let mut cfg = match (&common.config, dataset) {
        (Some(p), _) => {
            inputs.push(p.clone());
            RunConfig::load(p)?
        }
        (None, Some(d)) if d.join(dataset::CONFIG).is_file() => {
            let mut c = RunConfig::load(&d.join(dataset::CONFIG))?;
            c.paths = Default::default();
            c.paths.dataset = d.to_path_buf();
            c
        }
        _ => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = &common.run {
        cfg.paths.run = r.clone();
    }
    Ok(Setup { cfg, inputs })
}

/// Dataset path: the flag, else the config's `paths.dataset`.
fn dataset_dir(common: &Common, data: &DatasetArg) -> Result<PathBuf> {
    if let Some(d) = &data.dataset {
        return Ok(d.clone());
    }
    Ok(setup(common, None)?.cfg.paths.dataset)
}

/// Loads the dataset; its scene and rig sections override the run config
/// so every stage agrees with the data.
fn load_dataset(common: &Common, data: &DatasetArg) -> Result<(SyntheticScene, Setup)> {
    let dir = dataset_dir(common, data)?;
    let mut s = setup(common, Some(&dir))?;
    let (scene, dcfg) = read_scene(&dir)?;
    s.cfg.scene = dcfg.scene;
    s.cfg.rig = dcfg.rig;
    s.cfg.paths.dataset = dir.clone();
    let m = dir.join(manifest::FILE);
    s.inputs.push(if m.is_file() { m } else { dir.join(dataset::CONFIG) });
    Ok((scene, s))
}

/// One command's output folder.
struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    /// Removes what an earlier run of the same command listed, so the new
    /// manifest covers everything in the folder.
    fn open(dir: PathBuf) -> Result<Self> {
        let old = dir.join(manifest::FILE);
        if old.is_file() {
            if let Ok(m) = Manifest::read(&old) {
                for e in m.outputs {
                    let p = dir.join(&e.path);
                    if p.starts_with(&dir) && !e.path.contains("..") {
                        let _ = std::fs::remove_file(p);
                    }
                }
            }
            std::fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn under(run: &Path, command: &str) -> Result<Self> {
        Self::open(run.join(command))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn add(&mut self, p: PathBuf) {
        self.files.push(p);
    }

    fn bytes(&mut self, rel: &str, b: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel);
        write_file(&p, b)?;
        self.add(p.clone());
        Ok(p)
    }

    fn image(&mut self, rel: &str, img: &Image) -> Result<PathBuf> {
        let p = self.bytes(&format!("{rel}.pfm"), &pfm::encode(img))?;
        self.bytes(&format!("{rel}.png"), &png::encode_preview(img))?;
        Ok(p)
    }

    fn json(&mut self, rel: &str, v: &serde_json::Value) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(v).expect("json");
        s.push('\n');
        self.bytes(rel, s.as_bytes())
    }

    fn params(&mut self, rel: &str, p: &ParamSet) -> Result<PathBuf> {
        let path = self.path(rel);
        ckpt::write(&path, p)?;
        self.add(path.clone());
        Ok(path)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, inputs: &[PathBuf], notes: serde_json::Value) -> Result<PathBuf> {
        let stored = RunConfig { paths: Default::default(), ..cfg.clone() };
        self.bytes("config.toml", stored.to_toml().as_bytes())?;
        let mut m = Manifest::new(command, cfg.seed, &cfg.hash());
        if let serde_json::Value::Object(o) = notes {
            m.notes = o;
        }
        let p = m.write(&self.dir, inputs, &self.files)?;
        println!("{command}: wrote {} files to {}", self.files.len(), self.dir.display());
        Ok(p)
    }
}

fn split_at_last<'a>(s: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    s.rsplit_once('@').ok_or_else(|| Error::Input(format!("{what} `{s}` must look like PATH@...")))
}

fn numbers(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Input(format!("{what}: `{s}` is not a list of numbers")))?;
    if v.len() != n {
        return Err(Error::Input(format!("{what}: expected {n} numbers, got {}", v.len())));
    }
    Ok(v)
}

/// PFM as stored, PNG decoded to linear values.
fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => {
            let b = crate::codec::read_file(path)?;
            png::decode_preview(&b).map_err(|m| Error::format(path, m))
        }
        _ => pfm::read(path),
    }
}

fn hdrmerge_cmd(common: &Common, exposures: &[String], name: &str) -> Result<()> {
    let s = setup(common, None)?;
    let mut inputs = s.inputs.clone();
    let (mut images, mut times) = (Vec::new(), Vec::new());
    for e in exposures {
        let (p, t) = split_at_last(e, "exposure")?;
        let t = numbers(t, 1, "exposure time")?[0];
        let path = PathBuf::from(p);
        images.push(read_image(&path)?);
        inputs.push(path);
        times.push(t);
    }
    let stack = ExposureStack::new(images, times).map_err(|e| Error::Input(e.to_string()))?;
    let merged = hdr_merge(&stack).map_err(|e| Error::Input(e.to_string()))?;
    let mut out = Out::under(&s.cfg.paths.run, "hdrmerge")?;
    out.image(name, &merged.radiance)?;
    let r = &merged.radiance;
    let px: Vec<bool> = (0..r.width * r.height).map(|k| merged.saturated[k * r.channels..(k + 1) * r.channels].iter().any(|b| *b)).collect();
    out.bytes(&format!("{name}.saturated.mask.png"), &png::encode_mask(r.width, r.height, &px))?;
    let sat = px.iter().filter(|b| **b).count();
    out.finish("hdrmerge", &s.cfg, &inputs, json!({ "exposures": exposures.len(), "saturated_pixels": sat }))?;
    Ok(())
}

fn probe_unwrap_cmd(common: &Common, shots: &[String], height: Option<usize>, width: Option<usize>, rim_deg: f64, name: &str) -> Result<()> {
    let s = setup(common, None)?;
    let (h, w) = (height.unwrap_or(s.cfg.scene.env_height), width.unwrap_or(s.cfg.scene.env_width));
    let mut inputs = s.inputs.clone();
    let mut loaded = Vec::new();
    for shot in shots {
        let (p, geo) = split_at_last(shot, "shot")?;
        let v = numbers(geo, 6, "shot geometry")?;
        let path = PathBuf::from(p);
        let img = read_image(&path)?;
        inputs.push(path);
        let view = ProbeView { center: (v[0], v[1]), radius: v[2], view_dir: Vec3::new(v[3], v[4], v[5]) };
        loaded.push((img, view));
    }
    let refs: Vec<(&Image, ProbeView)> = loaded.iter().map(|(i, v)| (i, *v)).collect();
    let un = sphere_unwrap(&refs, h, w, rim_deg).map_err(|e| Error::Input(e.to_string()))?;
    let mut out = Out::under(&s.cfg.paths.run, "probe-unwrap")?;
    out.image(name, &dataset::env_to_image(&un.map))?;
    let cov = Image { width: w, height: h, channels: 1, data: un.coverage.iter().map(|c| *c as f32).collect() };
    out.bytes(&format!("{name}.coverage.pfm"), &pfm::encode(&cov))?;
    let covered = un.coverage.iter().filter(|c| **c > 0.0).count() as f64 / un.coverage.len() as f64;
    out.finish("probe-unwrap", &s.cfg, &inputs, json!({ "shots": shots.len(), "covered_fraction": covered }))?;
    Ok(())
}

fn gen_scene_cmd(common: &Common, out: Option<PathBuf>) -> Result<()> {
    let s = setup(common, None)?;
    let dir = out.unwrap_or_else(|| s.cfg.paths.dataset.clone());
    let scene = SyntheticScene::generate(&s.cfg.scene, &s.cfg.rig, s.cfg.seed)?;
    let mut o = Out::open(dir.clone())?;
    let files = write_scene(&dir, &scene, &s.cfg)?;
    o.files = files;
    // the dataset already carries config.toml; write the manifest directly
    let mut m = Manifest::new("gen-scene", s.cfg.seed, &s.cfg.hash());
    m.note("views", scene.views.len());
    m.note("poses", scene.poses.len());
    m.write(&dir, &s.inputs, &o.files)?;
    println!("gen-scene: wrote {} files to {}", o.files.len(), dir.display());
    Ok(())
}

fn train_views(scene: &SyntheticScene) -> Vec<GeometryView> {
    scene
        .views_of(Split::Train)
        .map(|v| GeometryView { pose: v.pose, camera: v.camera.clone(), image: v.image.clone(), mask: v.mask.clone() })
        .collect()
}

fn train_geometry_cmd(common: &Common, data: &DatasetArg, epochs: Option<usize>) -> Result<()> {
    let (scene, mut s) = load_dataset(common, data)?;
    if let Some(e) = epochs {
        s.cfg.geometry.epochs = e;
    }
    s.cfg.validate()?;
    let cfg = &s.cfg;
    let shells = pipeline::shells(&scene.mesh, &scene.poses)?;
    let mut field = pipeline::init_field(&scene.mesh, &body_config(scene.config.body), cfg)?;
    let run = pipeline::fit_geometry(&mut field, &shells, &train_views(&scene), cfg, |e, st| {
        println!("train-geometry epoch {e}: loss {:.5} l2 {:.6}", st.loss, st.l2)
    })?;
    let mut out = Out::under(&cfg.paths.run, "train-geometry")?;
    out.params("field.ckpt", field.params().expect("trained fields have parameters"))?;
    let epochs: Vec<_> = run.epochs.iter().map(|e| json!({ "loss": e.loss, "l2": e.l2, "hard": e.hard, "sigma": e.sigma })).collect();
    out.json("log.json", &json!({ "before_l2": run.before.l2, "after_l2": run.after.l2, "epochs": epochs }))?;
    out.finish("train-geometry", cfg, &s.inputs, json!({ "epochs": cfg.geometry.epochs, "l2": run.after.l2 }))?;
    Ok(())
}

fn load_field(path: &Path) -> Result<DensityField> {
    ckpt::load(path, DensityField::from_params)
}

fn pose_dir(p: usize) -> String {
    format!("pose_{p:02}")
}

fn bake_maps_cmd(common: &Common, data: &DatasetArg, field: Option<PathBuf>, views: Option<usize>) -> Result<()> {
    let (scene, mut s) = load_dataset(common, data)?;
    if let Some(v) = views {
        s.cfg.bake.views = v;
    }
    s.cfg.validate()?;
    let cfg = &s.cfg;
    let fpath = field.unwrap_or_else(|| cfg.paths.run.join("train-geometry/field.ckpt"));
    let field = load_field(&fpath)?;
    let shells = pipeline::shells(&scene.mesh, &scene.poses)?;
    let cams = pipeline::bake_cameras(&scene.rig.cameras, cfg);
    let env = (cfg.scene.env_height, cfg.scene.env_width);
    let mut out = Out::under(&cfg.paths.run, "bake-maps")?;
    let mut cov = Vec::new();
    for (p, shell) in shells.iter().enumerate() {
        let m = pipeline::bake(&field, shell, &cams, cfg)?;
        println!("bake-maps pose {p}: normal coverage {:.3}, visibility coverage {:.3}", m.normal_coverage, m.visibility_coverage);
        for f in maps::write_sparse(&out.path(&format!("{}/normals", pose_dir(p))), &m.normals, None)? {
            out.add(f);
        }
        for f in maps::write_sparse(&out.path(&format!("{}/visibility", pose_dir(p))), &m.visibility, Some(env))? {
            out.add(f);
        }
        cov.push(json!({ "pose": p, "normal": m.normal_coverage, "visibility": m.visibility_coverage }));
    }
    out.json("coverage.json", &json!(cov))?;
    let mut inputs = s.inputs.clone();
    inputs.push(fpath);
    out.finish("bake-maps", cfg, &inputs, json!({ "cameras": cams.len(), "poses": shells.len() }))?;
    Ok(())
}

fn train_inpaint_cmd(common: &Common, data: &DatasetArg, epochs: Option<usize>) -> Result<()> {
    let (scene, mut s) = load_dataset(common, data)?;
    if let Some(e) = epochs {
        s.cfg.inpaint.epochs = e;
    }
    s.cfg.validate()?;
    let cfg = &s.cfg;
    let run = pipeline::train_inpainters(&scene.mesh, &scene.rig.cameras, cfg, |net, e, l| {
        println!("train-inpaint {net} epoch {e}: loss {l:.6}")
    })?;
    let mut out = Out::under(&cfg.paths.run, "train-inpaint")?;
    let (n, v) = (run.nets.normal.as_ref().expect("trained"), run.nets.visibility.as_ref().expect("trained"));
    out.params("normal.ckpt", &n.params)?;
    out.params("visibility.ckpt", &v.params)?;
    out.json("log.json", &json!({ "normal": run.normal_log.epoch_losses, "visibility": run.visibility_log.epoch_losses }))?;
    out.finish("train-inpaint", cfg, &s.inputs, json!({ "epochs": cfg.inpaint.epochs }))?;
    Ok(())
}

fn read_pose_maps(dir: &Path, mesh: &uvrelight_core::body::ProxyMesh) -> Result<PoseMaps> {
    let (normals, _) = maps::read_sparse(&dir.join("normals"))?;
    let vb = dir.join("visibility");
    let (visibility, grid) = maps::read_sparse(&vb)?;
    if grid.is_none() {
        return Err(Error::format(&suffixed(&vb, ".vism"), "visibility map has no environment grid"));
    }
    let nc = normals.coverage(&mesh.texel_support(normals.height));
    let vc = visibility.coverage(&mesh.texel_support(visibility.height));
    Ok(PoseMaps { normals, visibility, normal_coverage: nc, visibility_coverage: vc })
}

fn read_dense_maps(dir: &Path) -> Result<DenseMaps> {
    Ok(DenseMaps { normals: maps::read_dense(&dir.join("normals"))?.0, visibility: maps::read_dense(&dir.join("visibility"))?.0 })
}

fn decompose_cmd(
    common: &Common,
    data: &DatasetArg,
    field: Option<PathBuf>,
    maps_dir: Option<PathBuf>,
    inpaint: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let (scene, mut s) = load_dataset(common, data)?;
    if let Some(e) = epochs {
        s.cfg.decompose.epochs = e;
    }
    s.cfg.validate()?;
    let cfg = &s.cfg;
    let mut inputs = s.inputs.clone();
    let fpath = field.unwrap_or_else(|| cfg.paths.run.join("train-geometry/field.ckpt"));
    let field = load_field(&fpath)?;
    inputs.push(fpath);
    let mdir = maps_dir.unwrap_or_else(|| cfg.paths.run.join("bake-maps"));
    let mut nets = Inpainters::default();
    if let Some(d) = &inpaint {
        let (np, vp) = (d.join("normal.ckpt"), d.join("visibility.ckpt"));
        nets.normal = Some(ckpt::load(&np, TrainedInpainter::from_params)?);
        nets.visibility = Some(ckpt::load(&vp, TrainedInpainter::from_params)?);
        inputs.extend([np, vp]);
    }
    let mut out = Out::under(&cfg.paths.run, "decompose")?;
    let env = (cfg.scene.env_height, cfg.scene.env_width);
    let mut frames = Vec::new();
    for (p, shell) in pipeline::shells(&scene.mesh, &scene.poses)?.into_iter().enumerate() {
        let pd = mdir.join(pose_dir(p));
        let pm = read_pose_maps(&pd, &scene.mesh)?;
        inputs.extend(manifest::files_under(&pd)?);
        let dense = pipeline::densify(&pm, &scene.mesh, &nets, cfg)?;
        for f in maps::write_dense(&out.path(&format!("dense/{}/normals", pose_dir(p))), &dense.normals, None)? {
            out.add(f);
        }
        for f in maps::write_dense(&out.path(&format!("dense/{}/visibility", pose_dir(p))), &dense.visibility, Some(env))? {
            out.add(f);
        }
        frames.push(pipeline::frame(&pose_dir(p), &field, shell, dense, cfg)?);
    }
    let envs = vec![scene.train_env.clone()];
    let views: Vec<DecompositionView> = scene
        .views_of(Split::Train)
        .map(|v| DecompositionView { frame: v.pose, env: 0, camera: v.camera.clone(), image: v.image.clone() })
        .collect();
    let mut model = Decomposition::initial(cfg)?;
    let log = pipeline::decompose(&field, &frames, &envs, &views, &mut model, cfg, |m| {
        println!("decompose epoch {}: loss {:.5} l2 {:.6}{}", m.epoch, m.loss, m.l2, if m.frozen { " (offsets frozen)" } else { "" })
    })?;
    write_materials(&mut out, &model.materials)?;
    out.params("uv_delta.ckpt", &model.uv_delta.params)?;
    out.params("features.ckpt", &model.features.params)?;
    let res = model.materials.resolution();
    out.bytes("coverage.pfm", &pfm::encode(&Image { width: res, height: res, channels: 1, data: log.coverage.clone() }))?;
    let epochs: Vec<_> = log
        .epochs
        .iter()
        .map(|m| json!({ "epoch": m.epoch, "loss": m.loss, "l2": m.l2, "smooth": m.smooth, "uv": m.uv, "frozen": m.frozen }))
        .collect();
    let mut notes = json!({ "epochs": cfg.decompose.epochs, "inpaint": if inpaint.is_some() { "networks" } else { "region growing" } });
    if scene.materials.res == res {
        let (p, n) = pipeline::albedo_psnr(&model.materials, &scene.materials.albedo, &log.coverage);
        println!("decompose: albedo PSNR {p:.2} dB over {n} covered texels");
        notes["albedo_psnr"] = json!(p);
        notes["covered_texels"] = json!(n);
    }
    out.json("log.json", &json!({ "epochs": epochs }))?;
    out.finish("decompose", cfg, &inputs, notes)?;
    Ok(())
}

fn write_materials(out: &mut Out, m: &MaterialMaps) -> Result<()> {
    let res = m.resolution();
    out.params("materials.ckpt", &m.params)?;
    out.image("albedo", &Image { width: res, height: res, channels: 3, data: m.albedo() })?;
    out.image("roughness", &Image { width: res, height: res, channels: 1, data: m.roughness() })?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn relight_cmd(
    common: &Common,
    data: &DatasetArg,
    field: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    materials: Option<PathBuf>,
    env: Option<PathBuf>,
    pose: Option<usize>,
    cameras: &[PathBuf],
) -> Result<()> {
    // checkpoints are checked before the (slower) dataset load
    let s0 = setup(common, None)?;
    let run = common.run.clone().unwrap_or(s0.cfg.paths.run);
    let ck = checkpoint.unwrap_or_else(|| run.join("decompose"));
    let mpath = materials.unwrap_or_else(|| ck.join("materials.ckpt"));
    let (upath, fepath) = (ck.join("uv_delta.ckpt"), ck.join("features.ckpt"));
    let mats = ckpt::load(&mpath, MaterialMaps::from_params)?;
    let uv_delta = ckpt::load(&upath, UVDeltaNet::from_params)?;
    let features = ckpt::load(&fepath, FeatureUVMap::from_params)?;
    let fpath = field.unwrap_or_else(|| run.join("train-geometry/field.ckpt"));
    let field = load_field(&fpath)?;
    let (scene, s) = load_dataset(common, data)?;
    let cfg = &s.cfg;
    let mut inputs = s.inputs.clone();
    inputs.extend([mpath, upath, fepath, fpath]);
    let pose = pose.unwrap_or(scene.config.train_poses);
    if pose >= scene.poses.len() {
        return Err(Error::Input(format!("pose {pose} out of range (dataset has {})", scene.poses.len())));
    }
    let envmap: EnvironmentMap = match &env {
        Some(p) => {
            inputs.push(p.clone());
            read_env(p)?
        }
        None => scene.held_out_env.clone(),
    };
    let named: Vec<(String, Camera)> = if cameras.is_empty() {
        scene.rig.held_out.iter().enumerate().map(|(k, c)| (format!("heldout_{k:02}"), c.clone())).collect()
    } else {
        let mut v = Vec::new();
        for p in cameras {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("view").to_string();
            v.push((stem, text::read_camera(p)?));
            inputs.push(p.clone());
        }
        v
    };
    let dd = ck.join("dense").join(pose_dir(pose));
    let dense = read_dense_maps(&dd)?;
    inputs.extend(manifest::files_under(&dd)?);
    let shell = pipeline::shells(&scene.mesh, &scene.poses[pose..pose + 1])?.remove(0);
    let frame = pipeline::frame(&pose_dir(pose), &field, shell, dense, cfg)?;
    let model = Decomposition { materials: mats, uv_delta, features };
    let mut out = Out::under(&run, "relight")?;
    let env_copy = out.path("env.pfm");
    write_env(&env_copy, &envmap)?;
    out.add(env_copy);
    for (name, cam) in &named {
        let img = pipeline::render(&field, &model, &frame, &envmap, cam, cfg)?;
        out.image(name, &img)?;
    }
    out.finish("relight", cfg, &inputs, json!({ "pose": pose, "views": named.len() }))?;
    Ok(())
}

fn edit_cmd(common: &Common, materials: Option<PathBuf>, mask: &Path, albedo: Option<&str>, roughness: Option<f32>) -> Result<()> {
    let s = setup(common, None)?;
    if albedo.is_none() && roughness.is_none() {
        return Err(Error::Input("edit needs --albedo and/or --roughness".into()));
    }
    let mpath = materials.unwrap_or_else(|| s.cfg.paths.run.join("decompose/materials.ckpt"));
    let maps0 = ckpt::load(&mpath, MaterialMaps::from_params)?;
    let res = maps0.resolution();
    let (w, h, m) = png::read_mask(mask)?;
    if (w, h) != (res, res) {
        return Err(Error::format(mask, format!("{w}x{h} mask for {res}x{res} materials")));
    }
    let n = res * res;
    let a = match albedo {
        Some(t) => {
            let v = numbers(t, 3, "albedo")?;
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Input("albedo must lie in [0, 1]".into()));
            }
            Some((0..n).flat_map(|_| v.iter().map(|x| *x as f32)).collect::<Vec<f32>>())
        }
        None => None,
    };
    if roughness.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
        return Err(Error::Input("roughness must lie in [0, 1]".into()));
    }
    let r = roughness.map(|r| vec![r; n]);
    let edited = edit_materials(&maps0, &MaterialEdit { mask: &m, albedo: a.as_deref(), roughness: r.as_deref() })?;
    let mut out = Out::under(&s.cfg.paths.run, "edit")?;
    write_materials(&mut out, &edited)?;
    let texels = m.iter().filter(|b| **b).count();
    let inputs = [s.inputs.clone(), vec![mpath, mask.to_path_buf()]].concat();
    out.finish("edit", &s.cfg, &inputs, json!({ "texels": texels }))?;
    Ok(())
}

fn metrics_cmd(common: &Common, pred: &Path, target: &Path, name: &str) -> Result<()> {
    let s = setup(common, None)?;
    let (a, b) = (pfm::read(pred)?, pfm::read(target)?);
    if !a.same_shape(&b) {
        return Err(Error::Input(format!(
            "{} is {}x{}x{}, {} is {}x{}x{}",
            pred.display(),
            a.width,
            a.height,
            a.channels,
            target.display(),
            b.width,
            b.height,
            b.channels
        )));
    }
    let p = metrics::psnr(&a, &b)?;
    let q = metrics::ssim(&a, &b).map_err(|e| Error::Input(e.to_string()))?;
    let v = json!({ "psnr": p, "ssim": q });
    println!("{v}");
    let mut out = Out::under(&s.cfg.paths.run, "metrics")?;
    out.json(&format!("{name}.json"), &v)?;
    out.finish("metrics", &s.cfg, &[s.inputs.clone(), vec![pred.to_path_buf(), target.to_path_buf()]].concat(), v)?;
    Ok(())
}
