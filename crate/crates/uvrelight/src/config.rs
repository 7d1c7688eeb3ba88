//! The run configuration: one TOML file with a section per stage. Unknown
//! keys are errors, missing keys take the defaults below, and every learning
//! rate and loss weight must be positive.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use uvrelight_core::density::{GeometryTrainConfig, GeometryWeights};
use uvrelight_core::geomaps::{BakeConfig, MarchConfig};
use uvrelight_core::inpaint::InpaintTrainConfig;
use uvrelight_core::relight::{DecompositionConfig, RayConfig, RelightLossWeights, RenderSettings};
use uvrelight_core::shading::ShadingOptions;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub scene: SceneConfig,
    pub rig: RigConfig,
    pub geometry: GeometryConfig,
    pub bake: BakeSection,
    pub inpaint: InpaintConfig,
    pub decompose: DecomposeConfig,
}

/// Relative paths are taken from the directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub run: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { dataset: "dataset".into(), run: "run".into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyKind {
    Human,
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub body: BodyKind,
    pub train_poses: usize,
    pub held_out_poses: usize,
    /// Largest joint rotation of the random poses, radians.
    pub pose_amplitude: f64,
    pub material_res: usize,
    pub env_height: usize,
    pub env_width: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            body: BodyKind::Human,
            train_poses: 3,
            held_out_poses: 1,
            pose_amplitude: 0.3,
            material_res: 64,
            env_height: 16,
            env_width: 32,
        }
    }
}

/// Cameras on a ring around the actor plus an elevated ring. The training
/// views are spread evenly over the rig; held-out cameras sit between rig
/// cameras at a different height.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub ring: usize,
    pub elevated: usize,
    pub train: usize,
    pub held_out: usize,
    pub width: usize,
    pub height: usize,
    /// Ring radius, metres.
    pub distance: f64,
    pub fov_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self { ring: 32, elevated: 8, train: 12, held_out: 4, width: 64, height: 128, distance: 3.0, fov_deg: 36.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub epochs: usize,
    pub lr: f64,
    pub samples_per_ray: usize,
    pub patch: usize,
    pub rays_per_batch: usize,
    /// Voxel spacing in canonical units (the box spans [-1, 1]).
    pub voxel_spacing: f64,
    /// Sharpness of the initial field built from the proxy's capsules, 1/m.
    /// Zero starts from an empty grid.
    pub init_sharpness: f64,
    pub lambda_l2: f64,
    pub lambda_hard: f64,
    pub lambda_sigma: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let d = GeometryTrainConfig::default();
        Self {
            epochs: d.epochs,
            lr: d.lr,
            samples_per_ray: d.samples_per_ray,
            patch: d.patch,
            rays_per_batch: d.rays_per_batch,
            voxel_spacing: 0.02,
            init_sharpness: 400.0,
            lambda_l2: d.weights.l2,
            lambda_hard: d.weights.hard,
            lambda_sigma: d.weights.sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BakeSection {
    pub normal_res: usize,
    pub visibility_res: usize,
    pub grid_spacing: f64,
    pub sample_spacing: f64,
    pub refine_samples: usize,
    pub lift: f64,
    pub step: f64,
    /// Rig cameras used per pose; 0 means all.
    pub views: usize,
}

impl Default for BakeSection {
    fn default() -> Self {
        let d = BakeConfig::default();
        Self {
            normal_res: d.normal_res,
            visibility_res: 64,
            grid_spacing: d.grid_spacing,
            sample_spacing: d.sample_spacing,
            refine_samples: d.refine_samples,
            lift: d.march.lift,
            step: d.march.step,
            views: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub valid_weight: f64,
    pub direction_subset: usize,
    pub normal_width: usize,
    pub visibility_width: usize,
    /// Random poses simulated for training pairs.
    pub poses: usize,
    /// Masks per pose, each from a random pair of rig cameras.
    pub masks_per_pose: usize,
    pub mask_cameras: usize,
    /// Region-growing rounds used when no trained net is given.
    pub morph_iterations: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        let d = InpaintTrainConfig::default();
        Self {
            epochs: 20,
            lr: d.lr,
            warmup_steps: d.warmup_steps,
            valid_weight: d.valid_weight,
            direction_subset: d.direction_subset,
            normal_width: 12,
            visibility_width: 8,
            poses: 4,
            masks_per_pose: 3,
            mask_cameras: 2,
            morph_iterations: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeConfig {
    pub epochs: usize,
    pub frozen_fraction: f64,
    pub lr_materials: f64,
    pub lr_networks: f64,
    pub patch: usize,
    pub patches_per_step: usize,
    pub lambda_l2: f64,
    pub lambda_smooth: f64,
    pub lambda_uv: f64,
    pub samples: usize,
    pub sigma_d: f64,
    pub coarse_spacing: f64,
    pub hidden: Vec<usize>,
    pub feature_res: usize,
    pub specular: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        let d = DecompositionConfig::default();
        Self {
            epochs: d.epochs,
            frozen_fraction: d.frozen_fraction,
            lr_materials: d.lr_materials,
            lr_networks: d.lr_networks,
            patch: d.patch,
            patches_per_step: d.patches_per_step,
            lambda_l2: d.weights.l2,
            lambda_smooth: d.weights.smooth,
            lambda_uv: d.weights.uv,
            samples: d.rays.samples,
            sigma_d: d.rays.sigma_d,
            coarse_spacing: d.rays.coarse_spacing,
            hidden: vec![32, 32],
            feature_res: uvrelight_core::relight::FEATURE_RES,
            specular: true,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least 1")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads, parses and validates; relative paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::codec::read_text(path)?;
        let mut c = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.paths.dataset, &mut c.paths.run] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, paths excluded so that the
    /// hash names the experiment and not where it lives.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        nonzero("scene.train_poses", s.train_poses)?;
        nonzero("scene.held_out_poses", s.held_out_poses)?;
        nonzero("scene.material_res", s.material_res)?;
        if s.env_height < 2 || s.env_width < 2 {
            return Err(Error::Config("scene.env_height and scene.env_width must be at least 2".into()));
        }
        if !(s.pose_amplitude >= 0.0 && s.pose_amplitude < 3.0) {
            return Err(Error::Config("scene.pose_amplitude must be in [0, 3)".into()));
        }
        let r = &self.rig;
        nonzero("rig.ring", r.ring)?;
        nonzero("rig.train", r.train)?;
        nonzero("rig.held_out", r.held_out)?;
        nonzero("rig.width", r.width)?;
        nonzero("rig.height", r.height)?;
        positive("rig.distance", r.distance)?;
        if !(r.fov_deg > 0.0 && r.fov_deg < 170.0) {
            return Err(Error::Config("rig.fov_deg must be in (0, 170)".into()));
        }
        if r.train > r.ring + r.elevated {
            return Err(Error::Config(format!("rig.train = {} exceeds the {} rig cameras", r.train, r.ring + r.elevated)));
        }
        let g = &self.geometry;
        positive("geometry.lr", g.lr)?;
        positive("geometry.lambda_l2", g.lambda_l2)?;
        positive("geometry.lambda_hard", g.lambda_hard)?;
        positive("geometry.lambda_sigma", g.lambda_sigma)?;
        positive("geometry.voxel_spacing", g.voxel_spacing)?;
        nonzero("geometry.samples_per_ray", g.samples_per_ray)?;
        nonzero("geometry.patch", g.patch)?;
        nonzero("geometry.rays_per_batch", g.rays_per_batch)?;
        if !(g.init_sharpness >= 0.0) {
            return Err(Error::Config("geometry.init_sharpness must be non-negative".into()));
        }
        let b = &self.bake;
        nonzero("bake.normal_res", b.normal_res)?;
        nonzero("bake.visibility_res", b.visibility_res)?;
        nonzero("bake.refine_samples", b.refine_samples)?;
        positive("bake.grid_spacing", b.grid_spacing)?;
        positive("bake.sample_spacing", b.sample_spacing)?;
        positive("bake.lift", b.lift)?;
        positive("bake.step", b.step)?;
        let i = &self.inpaint;
        positive("inpaint.lr", i.lr)?;
        positive("inpaint.valid_weight", i.valid_weight)?;
        nonzero("inpaint.normal_width", i.normal_width)?;
        nonzero("inpaint.visibility_width", i.visibility_width)?;
        nonzero("inpaint.direction_subset", i.direction_subset)?;
        nonzero("inpaint.poses", i.poses)?;
        nonzero("inpaint.masks_per_pose", i.masks_per_pose)?;
        nonzero("inpaint.mask_cameras", i.mask_cameras)?;
        let d = &self.decompose;
        positive("decompose.lr_materials", d.lr_materials)?;
        positive("decompose.lr_networks", d.lr_networks)?;
        positive("decompose.lambda_l2", d.lambda_l2)?;
        positive("decompose.lambda_smooth", d.lambda_smooth)?;
        positive("decompose.lambda_uv", d.lambda_uv)?;
        positive("decompose.sigma_d", d.sigma_d)?;
        positive("decompose.coarse_spacing", d.coarse_spacing)?;
        if !(0.0..=1.0).contains(&d.frozen_fraction) {
            return Err(Error::Config("decompose.frozen_fraction must be in [0, 1]".into()));
        }
        if d.patch < 2 || d.samples < 2 {
            return Err(Error::Config("decompose.patch and decompose.samples must be at least 2".into()));
        }
        nonzero("decompose.patches_per_step", d.patches_per_step)?;
        nonzero("decompose.feature_res", d.feature_res)?;
        if d.hidden.is_empty() || d.hidden.contains(&0) {
            return Err(Error::Config("decompose.hidden needs at least one non-zero layer width".into()));
        }
        Ok(())
    }

    pub fn geometry_train(&self) -> GeometryTrainConfig {
        let g = &self.geometry;
        GeometryTrainConfig {
            epochs: g.epochs,
            lr: g.lr,
            samples_per_ray: g.samples_per_ray,
            patch: g.patch,
            rays_per_batch: g.rays_per_batch,
            seed: self.seed,
            weights: GeometryWeights { l2: g.lambda_l2, hard: g.lambda_hard, sigma: g.lambda_sigma },
        }
    }

    pub fn bake_config(&self) -> BakeConfig {
        let b = &self.bake;
        BakeConfig {
            normal_res: b.normal_res,
            visibility_res: b.visibility_res,
            grid_spacing: b.grid_spacing,
            sample_spacing: b.sample_spacing,
            refine_samples: b.refine_samples,
            march: MarchConfig { lift: b.lift, step: b.step },
        }
    }

    pub fn inpaint_train(&self) -> InpaintTrainConfig {
        let i = &self.inpaint;
        InpaintTrainConfig {
            epochs: i.epochs,
            lr: i.lr,
            warmup_steps: i.warmup_steps,
            valid_weight: i.valid_weight,
            direction_subset: i.direction_subset,
            seed: self.seed,
        }
    }

    pub fn rays(&self) -> RayConfig {
        let d = &self.decompose;
        RayConfig { coarse_spacing: d.coarse_spacing, samples: d.samples, sigma_d: d.sigma_d, ..RayConfig::default() }
    }

    pub fn shading(&self) -> ShadingOptions {
        ShadingOptions { specular: self.decompose.specular, ..ShadingOptions::default() }
    }

    pub fn decomposition(&self) -> DecompositionConfig {
        let d = &self.decompose;
        DecompositionConfig {
            epochs: d.epochs,
            frozen_fraction: d.frozen_fraction,
            lr_materials: d.lr_materials,
            lr_networks: d.lr_networks,
            patch: d.patch,
            patches_per_step: d.patches_per_step,
            weights: RelightLossWeights { l2: d.lambda_l2, smooth: d.lambda_smooth, uv: d.lambda_uv },
            rays: self.rays(),
            shading: self.shading(),
            seed: self.seed,
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings { rays: self.rays(), shading: self.shading() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.rig.ring + c.rig.elevated, 40);
        assert_eq!(c.geometry.lambda_l2, 100.0);
        assert_eq!(c.geometry.lr, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["sed = 3", "[scene]\nbodies = 2", "[decompose]\nlambda_l3 = 1.0", "[nope]\n"] {
            let e = RunConfig::parse(bad).unwrap_err();
            assert_eq!(e.exit_code(), 3, "{bad}");
            assert!(!e.to_string().contains('\n'));
        }
    }

    #[test]
    fn non_positive_weights_and_rates_are_rejected() {
        for bad in [
            "[geometry]\nlr = 0.0",
            "[geometry]\nlambda_hard = -1.0",
            "[decompose]\nlambda_uv = 0.0",
            "[decompose]\nlr_materials = nan",
            "[inpaint]\nlr = -0.01",
            "[rig]\ntrain = 50",
            "[decompose]\nhidden = []",
        ] {
            assert_eq!(RunConfig::parse(bad).unwrap_err().exit_code(), 3, "{bad}");
        }
        assert!(RunConfig::parse("seed = 9\n[geometry]\nepochs = 0").is_ok());
    }

    #[test]
    fn round_trip_and_hash() {
        let mut c = RunConfig::default();
        c.seed = 7;
        c.decompose.hidden = vec![16];
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let mut moved = c.clone();
        moved.paths.run = "/elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
        moved.seed = 8;
        assert_ne!(moved.hash(), c.hash());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[paths]\ndataset = \"d\"\nrun = \"/abs\"\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.paths.dataset, dir.path().join("d"));
        assert_eq!(c.paths.run, PathBuf::from("/abs"));
        assert_eq!(RunConfig::load(&dir.path().join("missing.toml")).unwrap_err().exit_code(), 2);
    }

    proptest! {
        #[test]
        fn stage_configs_carry_the_seed(seed in any::<u64>()) {
            let c = RunConfig { seed, ..Default::default() };
            prop_assert_eq!(c.geometry_train().seed, seed);
            prop_assert_eq!(c.inpaint_train().seed, seed);
            prop_assert_eq!(c.decomposition().seed, seed);
        }
    }
}
