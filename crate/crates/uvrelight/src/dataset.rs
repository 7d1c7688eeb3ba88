//! The on-disk synthetic dataset written by `gen-scene`:
//!
//! ```text
//! config.toml          the run config that generated it
//! animation.txt        training poses, then held-out poses
//! cameras/rig_NN.txt   every rig camera (baking uses all of them)
//! cameras/heldout_NN.txt
//! env/train.pfm, env/heldout.pfm
//! truth/albedo.pfm, truth/roughness.pfm
//! truth/pose_NN/normals.pfm|.mask.png, visibility.vism|.mask.png
//! images/<view>.pfm, <view>.mask.png, <view>.png (8-bit preview)
//! views.json           view name, split, pose and camera file
//! manifest.json
//! ```
//!
//! Like the oracle, this module never touches the training code.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use uvrelight_core::body::ProxyMesh;
use uvrelight_core::envlight::EnvironmentMap;
use uvrelight_core::image::Image;

use crate::codec::{pfm, png, read_text, suffixed, text, vism, write_file};
use crate::config::RunConfig;
use crate::error::bad_input;
use crate::scene::{body_config, Rig, Split, SyntheticScene, TrueMaterials, View, SHADOW_LIFT};
use crate::{Error, Result};

pub const CONFIG: &str = "config.toml";
pub const VIEWS: &str = "views.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub name: String,
    /// `train` or `heldout`.
    pub split: String,
    pub pose: usize,
    pub camera: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewIndex {
    pub rig_cameras: usize,
    /// Rig indices of the training cameras.
    pub train: Vec<usize>,
    pub views: Vec<ViewEntry>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::HeldOut => "heldout",
    }
}

pub fn env_to_image(e: &EnvironmentMap) -> Image {
    Image { width: e.width, height: e.height, channels: 3, data: e.radiance.clone() }
}

pub fn read_env(path: &Path) -> Result<EnvironmentMap> {
    let img = pfm::read(path)?;
    if img.channels != 3 {
        return Err(Error::format(path, "environment maps must be RGB"));
    }
    EnvironmentMap::new(img.height, img.width, img.data).map_err(bad_input(path))
}

pub fn write_env(path: &Path, e: &EnvironmentMap) -> Result<()> {
    pfm::write(path, &env_to_image(e))
}

fn rig_camera(k: usize) -> String {
    format!("cameras/rig_{k:02}.txt")
}

fn held_out_camera(k: usize) -> String {
    format!("cameras/heldout_{k:02}.txt")
}

/// Image, mask and preview paths of a view.
pub fn image_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    let base = dir.join("images").join(name);
    [suffixed(&base, ".pfm"), suffixed(&base, ".mask.png"), suffixed(&base, ".png")]
}

/// Writes `scene` under `dir` and returns the files written (manifest
/// excluded).
pub fn write_scene(dir: &Path, scene: &SyntheticScene, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut put = |rel: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(rel);
        write_file(&p, bytes)?;
        out.push(p);
        Ok(())
    };
    // paths would tie the bytes to where the dataset was written
    let stored = RunConfig { paths: Default::default(), ..cfg.clone() };
    put(CONFIG, stored.to_toml().as_bytes())?;
    put("animation.txt", text::encode_animation(&scene.poses).as_bytes())?;
    for (k, c) in scene.rig.cameras.iter().enumerate() {
        put(&rig_camera(k), text::encode_camera(c).as_bytes())?;
    }
    for (k, c) in scene.rig.held_out.iter().enumerate() {
        put(&held_out_camera(k), text::encode_camera(c).as_bytes())?;
    }
    put("env/train.pfm", &pfm::encode(&env_to_image(&scene.train_env)))?;
    put("env/heldout.pfm", &pfm::encode(&env_to_image(&scene.held_out_env)))?;
    put("truth/albedo.pfm", &pfm::encode(&scene.materials.albedo_image()))?;
    put("truth/roughness.pfm", &pfm::encode(&scene.materials.roughness_image()))?;
    let (nres, vres) = (cfg.bake.normal_res, cfg.bake.visibility_res);
    let env = &scene.train_env;
    for p in 0..scene.poses.len() {
        let body = scene.posed(p)?;
        let normals = body.texel_normals(nres);
        let valid: Vec<bool> = normals.iter().map(Option::is_some).collect();
        let data = normals.iter().flat_map(|n| n.map_or([0.0; 3], |n| [n.x as f32, n.y as f32, n.z as f32])).collect();
        put(&format!("truth/pose_{p:02}/normals.pfm"), &pfm::encode(&Image { width: nres, height: nres, channels: 3, data }))?;
        put(&format!("truth/pose_{p:02}/normals.mask.png"), &png::encode_mask(nres, nres, &valid))?;
        let vis = body.texel_visibility(vres, &env.geometry.directions, SHADOW_LIFT);
        let valid: Vec<bool> = vis.iter().map(Option::is_some).collect();
        let c = env.len();
        let values = vis.iter().flat_map(|v| v.clone().unwrap_or_else(|| vec![f32::NAN; c])).collect();
        let block = vism::VisBlock { height: vres, width: vres, env_height: env.height, env_width: env.width, values, valid };
        put(&format!("truth/pose_{p:02}/visibility.vism"), &vism::encode(&block))?;
        put(&format!("truth/pose_{p:02}/visibility.mask.png"), &png::encode_mask(vres, vres, &block.valid))?;
    }
    let mut entries = Vec::new();
    let (mut ti, mut hi) = (0, 0);
    for v in &scene.views {
        let camera = match v.split {
            Split::Train => {
                ti += 1;
                rig_camera(scene.rig.train[ti - 1])
            }
            Split::HeldOut => {
                hi += 1;
                held_out_camera(hi - 1)
            }
        };
        let mask: Vec<bool> = v.mask.data.iter().map(|m| *m > 0.5).collect();
        put(&format!("images/{}.pfm", v.name), &pfm::encode(&v.image))?;
        put(&format!("images/{}.mask.png", v.name), &png::encode_mask(v.mask.width, v.mask.height, &mask))?;
        put(&format!("images/{}.png", v.name), &png::encode_preview(&v.image))?;
        entries.push(ViewEntry { name: v.name.clone(), split: split_name(v.split).into(), pose: v.pose, camera });
    }
    let index = ViewIndex { rig_cameras: scene.rig.cameras.len(), train: scene.rig.train.clone(), views: entries };
    let mut s = serde_json::to_string_pretty(&index).expect("views serialize");
    s.push('\n');
    put(VIEWS, s.as_bytes())?;
    Ok(out)
}

pub fn read_views(dir: &Path) -> Result<ViewIndex> {
    let p = dir.join(VIEWS);
    serde_json::from_str(&read_text(&p)?).map_err(|e| Error::format(&p, e.to_string()))
}

fn read_mask(path: &Path) -> Result<Image> {
    let (w, h, m) = png::read_mask(path)?;
    Ok(Image { width: w, height: h, channels: 1, data: m.iter().map(|b| f32::from(u8::from(*b))).collect() })
}

/// Loads a dataset written by [`write_scene`]. The body comes from the
/// stored config; everything else is read back from the files.
pub fn read_scene(dir: &Path) -> Result<(SyntheticScene, RunConfig)> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    let cfg = RunConfig::load(&dir.join(CONFIG))?;
    let mesh = Arc::new(ProxyMesh::build(&body_config(cfg.scene.body)).map_err(|e| Error::Config(format!("body: {e}")))?);
    let anim = dir.join("animation.txt");
    let poses = text::read_animation(&anim)?;
    let joints = mesh.config.bones.len();
    if poses.iter().any(|p| p.joint_rotations.len() != joints) {
        return Err(Error::format(&anim, format!("poses must have {joints} joints")));
    }
    if poses.len() != cfg.scene.train_poses + cfg.scene.held_out_poses {
        return Err(Error::format(&anim, format!("{} poses, config asks for {}", poses.len(), cfg.scene.train_poses + cfg.scene.held_out_poses)));
    }
    let (ap, rp) = (dir.join("truth/albedo.pfm"), dir.join("truth/roughness.pfm"));
    let (albedo, rough) = (pfm::read(&ap)?, pfm::read(&rp)?);
    let res = cfg.scene.material_res;
    if (albedo.width, albedo.height, albedo.channels) != (res, res, 3) {
        return Err(Error::format(&ap, format!("expected {res}x{res} RGB")));
    }
    if (rough.width, rough.height, rough.channels) != (res, res, 1) {
        return Err(Error::format(&rp, format!("expected {res}x{res} single channel")));
    }
    // chart labels depend only on the mesh
    let labels = TrueMaterials::generate(&mesh, res, 0).labels;
    let materials = TrueMaterials { res, albedo: albedo.data, roughness: rough.data, labels };
    let train_env = read_env(&dir.join("env/train.pfm"))?;
    let held_out_env = read_env(&dir.join("env/heldout.pfm"))?;
    let index = read_views(dir)?;
    let vp = dir.join(VIEWS);
    let cameras = (0..index.rig_cameras).map(|k| text::read_camera(&dir.join(rig_camera(k)))).collect::<Result<Vec<_>>>()?;
    if index.train.iter().any(|t| *t >= cameras.len()) {
        return Err(Error::format(&vp, "training camera index out of range"));
    }
    let mut held_out = Vec::new();
    let mut views = Vec::new();
    for e in &index.views {
        let split = match e.split.as_str() {
            "train" => Split::Train,
            "heldout" => Split::HeldOut,
            s => return Err(Error::format(&vp, format!("view {}: unknown split `{s}`", e.name))),
        };
        if e.pose >= poses.len() || e.name.contains(['/', '\\']) || e.camera.contains("..") {
            return Err(Error::format(&vp, format!("view {}: bad pose, name or camera path", e.name)));
        }
        let camera = text::read_camera(&dir.join(&e.camera))?;
        if split == Split::HeldOut {
            held_out.push(camera.clone());
        }
        let [ip, mp, _] = image_paths(dir, &e.name);
        let image = pfm::read(&ip)?;
        let mask = read_mask(&mp)?;
        if (image.width, image.height, image.channels) != (camera.width, camera.height, 3) {
            return Err(Error::format(&ip, "image size differs from its camera"));
        }
        if (mask.width, mask.height) != (camera.width, camera.height) {
            return Err(Error::format(&mp, "mask size differs from its camera"));
        }
        views.push(View { name: e.name.clone(), split, pose: e.pose, camera, image, mask });
    }
    let rig = Rig { cameras, train: index.train.clone(), held_out };
    let scene = SyntheticScene {
        config: cfg.scene.clone(),
        seed: cfg.seed,
        mesh,
        poses,
        materials,
        train_env,
        held_out_env,
        rig,
        views,
    };
    Ok((scene, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BodyKind, RigConfig, SceneConfig};

    fn tiny() -> RunConfig {
        RunConfig {
            seed: 3,
            scene: SceneConfig { body: BodyKind::Sphere, material_res: 16, env_height: 4, env_width: 8, ..Default::default() },
            bake: crate::config::BakeSection { normal_res: 8, visibility_res: 4, ..Default::default() },
            rig: RigConfig { ring: 4, elevated: 2, train: 3, held_out: 2, width: 10, height: 12, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn scenes_round_trip() {
        let cfg = tiny();
        let scene = SyntheticScene::generate(&cfg.scene, &cfg.rig, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_scene(dir.path(), &scene, &cfg).unwrap();
        assert_eq!(files.len(), 2 + 6 + 2 + 2 + 2 + 4 * 4 + 5 * 3 + 1);
        let (back, c2) = read_scene(dir.path()).unwrap();
        assert_eq!(c2.hash(), cfg.hash());
        assert_eq!(back.views, scene.views);
        assert_eq!(back.poses, scene.poses);
        assert_eq!(back.materials, scene.materials);
        assert_eq!(back.rig, scene.rig);
        assert_eq!(back.train_env, scene.train_env);
        assert_eq!(back.held_out_env, scene.held_out_env);
    }

    #[test]
    fn broken_datasets_name_the_file() {
        let cfg = tiny();
        let scene = SyntheticScene::generate(&cfg.scene, &cfg.rig, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &scene, &cfg).unwrap();
        let gone = dir.path().join("images/train_01.pfm");
        std::fs::remove_file(&gone).unwrap();
        let e = read_scene(dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(e.path(), Some(gone.as_path()));
        let e = read_scene(&dir.path().join("nope")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
