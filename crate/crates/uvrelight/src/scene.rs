//! Synthetic actors and the oracle renderer that produces their ground-truth
//! images. The oracle intersects rays with the proxy mesh exactly, reads the
//! true material rasters, traces hard shadow rays for visibility and shades
//! with the microfacet transport. It deliberately uses nothing from the
//! density, baking, inpainting, relighting or autodiff modules, so the
//! learned path cannot leak into its own ground truth (a test below checks
//! the imports).

use std::sync::Arc;

use uvrelight_core::body::{BodyConfig, Pose, PosedBody, ProxyMesh};
use uvrelight_core::camera::Camera;
use uvrelight_core::envlight::EnvironmentMap;
use uvrelight_core::image::Image;
use uvrelight_core::math::{Mat3, Vec3};
use uvrelight_core::shading::{light_transport, ShadingOptions, SurfacePayload};
use uvrelight_core::{par, rng};

use crate::config::{BodyKind, RigConfig, SceneConfig};
use crate::{Error, Result};

/// Offset of shadow-ray origins along the face normal, metres.
pub const SHADOW_LIFT: f64 = 1e-3;

pub fn body_config(kind: BodyKind) -> BodyConfig {
    match kind {
        BodyKind::Human => BodyConfig::human(),
        BodyKind::Sphere => BodyConfig::sphere(Vec3::new(0.0, 0.0, 0.9), 0.3),
    }
}

/// Ground-truth materials on the square UV atlas, row-major, texel `(i, j)`
/// centred at `((j + ½)/n, (i + ½)/n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueMaterials {
    pub res: usize,
    /// `res² × 3`, linear.
    pub albedo: Vec<f32>,
    /// `res²`.
    pub roughness: Vec<f32>,
    /// Chart index + 1 per texel, 0 in the gutter.
    pub labels: Vec<u16>,
}

const ROUGHNESS_LEVELS: [f32; 4] = [0.45, 0.6, 0.75, 0.9];

impl TrueMaterials {
    /// A smooth two-tone pattern per chart over a chart-specific base color,
    /// and one roughness per chart (piecewise constant).
    pub fn generate(mesh: &ProxyMesh, res: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x5ce0);
        let charts: Vec<([f64; 3], f64, f64, f32)> = (0..mesh.charts.len())
            .map(|_| {
                let base = [0.2 + 0.6 * rng::uniform(&mut r), 0.2 + 0.6 * rng::uniform(&mut r), 0.2 + 0.6 * rng::uniform(&mut r)];
                let (fa, fb) = (1.0 + (2.0 * rng::uniform(&mut r)).floor(), 1.0 + (2.0 * rng::uniform(&mut r)).floor());
                let rough = ROUGHNESS_LEVELS[(4.0 * rng::uniform(&mut r)) as usize % 4];
                (base, fa, fb, rough)
            })
            .collect();
        let n = res * res;
        let (mut albedo, mut roughness, mut labels) = (vec![0.5f32; 3 * n], vec![0.6f32; n], vec![0u16; n]);
        for k in 0..n {
            let (u, v) = (((k % res) as f64 + 0.5) / res as f64, ((k / res) as f64 + 0.5) / res as f64);
            let Some(c) = mesh.chart_at(u, v) else { continue };
            let (a, b) = mesh.charts[c].local(u, v);
            let (base, fa, fb, rough) = charts[c];
            // the pattern wraps around the capsule, so use whole periods in a
            let m = 0.8 + 0.2 * (std::f64::consts::TAU * fa * a).sin() * (std::f64::consts::PI * fb * b).cos();
            for ch in 0..3 {
                albedo[3 * k + ch] = (base[ch] * m) as f32;
            }
            roughness[k] = rough;
            labels[k] = c as u16 + 1;
        }
        Self { res, albedo, roughness, labels }
    }

    /// Bilinear lookup at atlas position `(u, v)` using only texels of chart
    /// `label`; `(albedo, roughness)`.
    pub fn lookup(&self, u: f64, v: f64, label: u16) -> ([f64; 3], f64) {
        let n = self.res;
        let (x, y) = (u * n as f64 - 0.5, v * n as f64 - 0.5);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let idx = |a: f64| (a.max(0.0) as usize).min(n - 1);
        let (c0, c1, r0, r1) = (idx(x0), idx(x0 + 1.0), idx(y0), idx(y0 + 1.0));
        let taps = [
            (r0 * n + c0, (1.0 - fx) * (1.0 - fy)),
            (r0 * n + c1, fx * (1.0 - fy)),
            (r1 * n + c0, (1.0 - fx) * fy),
            (r1 * n + c1, fx * fy),
        ];
        let on: f64 = taps.iter().filter(|(k, _)| self.labels[*k] == label).map(|(_, w)| w).sum();
        let (mut a, mut rho) = ([0.0; 3], 0.0);
        for (k, w) in taps {
            let w = if on > 1e-12 {
                if self.labels[k] == label { w / on } else { 0.0 }
            } else {
                w
            };
            for (ch, ac) in a.iter_mut().enumerate() {
                *ac += w * self.albedo[3 * k + ch] as f64;
            }
            rho += w * self.roughness[k] as f64;
        }
        (a, rho)
    }

    pub fn albedo_image(&self) -> Image {
        Image { width: self.res, height: self.res, channels: 3, data: self.albedo.clone() }
    }

    pub fn roughness_image(&self) -> Image {
        Image { width: self.res, height: self.res, channels: 1, data: self.roughness.clone() }
    }
}

/// Training poses first, then held-out ones. Joint rotations are uniform in
/// `±amplitude` (the torso joints move half as much), with a random turn
/// about the vertical axis.
pub fn generate_poses(kind: BodyKind, count: usize, amplitude: f64, seed: u64) -> Vec<Pose> {
    let joints = body_config(kind).bones.len();
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, 0x9050 + i as u64);
            let mut p = Pose::identity(joints);
            for (j, rot) in p.joint_rotations.iter_mut().enumerate() {
                let a = if kind == BodyKind::Human && j < 4 { 0.5 * amplitude } else { amplitude };
                *rot = Vec3::new(
                    a * (2.0 * rng::uniform(&mut r) - 1.0),
                    a * (2.0 * rng::uniform(&mut r) - 1.0),
                    a * (2.0 * rng::uniform(&mut r) - 1.0),
                );
            }
            let yaw = 0.4 * (2.0 * rng::uniform(&mut r) - 1.0);
            let centre = match kind {
                BodyKind::Human => Vec3::new(0.0, 0.0, 0.95),
                BodyKind::Sphere => Vec3::new(0.0, 0.0, 0.9),
            };
            p.global_rotation = Mat3::from_axis_angle(Vec3::new(0.0, 0.0, yaw));
            // turn about the body's vertical axis, not the world origin
            p.global_translation = centre - p.global_rotation * centre;
            p
        })
        .collect()
}

/// Training environment: a bright warm key light high on one side over a
/// blue sky and a dim floor.
pub fn train_environment(height: usize, width: usize) -> EnvironmentMap {
    let key = Vec3::new(0.5, -0.6, 0.62).normalized();
    EnvironmentMap::from_fn(height, width, |d| {
        let sky = 0.35 + 0.25 * d.z.max(0.0);
        let lobe = (d.dot(key) - 0.6).max(0.0) * 5.0;
        [sky + lobe * 1.0, sky + lobe * 0.85 + 0.05, sky * 1.3 + lobe * 0.6]
    })
}

/// Held-out environment: a cool light from the other side and a warm floor
/// bounce, so its spectrum and direction both differ from training.
pub fn held_out_environment(height: usize, width: usize) -> EnvironmentMap {
    let key = Vec3::new(-0.7, -0.3, 0.4).normalized();
    EnvironmentMap::from_fn(height, width, |d| {
        let lobe = (d.dot(key) - 0.5).max(0.0) * 4.0;
        let floor = 0.3 * (-d.z).max(0.0);
        [0.3 + lobe * 0.6 + floor, 0.32 + lobe * 0.8 + 0.5 * floor, 0.4 + lobe * 1.1 + 0.2 * floor]
    })
}

/// The camera rig around an actor centred at `centre`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    /// Ring cameras, then elevated ones. Used for baking.
    pub cameras: Vec<Camera>,
    /// Indices into `cameras` of the training views.
    pub train: Vec<usize>,
    /// Novel viewpoints, not part of `cameras`.
    pub held_out: Vec<Camera>,
}

pub fn build_rig(cfg: &RigConfig, centre: Vec3) -> Result<Rig> {
    let fov = cfg.fov_deg.to_radians();
    let at = |angle: f64, dz: f64| -> Result<Camera> {
        let eye = centre + Vec3::new(cfg.distance * angle.cos(), cfg.distance * angle.sin(), dz);
        Camera::look_at(eye, centre, Vec3::Z, fov, cfg.width, cfg.height).map_err(|e| Error::Config(format!("rig: {e}")))
    };
    let tau = std::f64::consts::TAU;
    let mut cameras = Vec::with_capacity(cfg.ring + cfg.elevated);
    for k in 0..cfg.ring {
        cameras.push(at(tau * k as f64 / cfg.ring as f64, 0.0)?);
    }
    for k in 0..cfg.elevated {
        cameras.push(at(tau * (k as f64 + 0.5) / cfg.elevated as f64, 0.6 * cfg.distance)?);
    }
    let total = cameras.len();
    let train = (0..cfg.train).map(|k| k * total / cfg.train).collect();
    let held_out = (0..cfg.held_out)
        .map(|k| at(tau * (k as f64 + 0.37) / cfg.held_out as f64, 0.25 * cfg.distance))
        .collect::<Result<_>>()?;
    Ok(Rig { cameras, train, held_out })
}

/// Hard visibility from surface point `p` (face normal `face_n`, shading
/// normal `n`) toward each direction.
pub fn oracle_visibility(body: &PosedBody, p: Vec3, face_n: Vec3, n: Vec3, dirs: &[Vec3]) -> Vec<f32> {
    let o = p + face_n * SHADOW_LIFT;
    dirs.iter()
        .map(|d| f32::from(u8::from(d.dot(n) > 0.0 && body.raycast(o, *d, 0.0, f64::INFINITY).is_none())))
        .collect()
}

/// One oracle image and its coverage mask (1 where the pixel centre ray hits
/// the actor).
pub fn oracle_render(
    body: &PosedBody,
    materials: &TrueMaterials,
    env: &EnvironmentMap,
    camera: &Camera,
    opts: &ShadingOptions,
) -> Result<(Image, Image)> {
    let (w, h) = (camera.width, camera.height);
    let mesh = &body.mesh;
    let pixels = par::map_range(w * h, |k| -> Result<Option<[f64; 3]>> {
        let (o, d) = camera.pixel_ray(k % w, k / w);
        let Some(hit) = body.raycast(o, d, 0.0, f64::INFINITY) else { return Ok(None) };
        let (face, bary) = mesh.canonical_site(hit.face, hit.bary);
        let frame = body.frame_at(face, bary);
        let n = body.smooth_normal(face, bary);
        let [u, v] = mesh.uv_at(face, bary);
        let label = mesh.chart_at(u, v).map_or(0, |c| c as u16 + 1);
        let (albedo, rho) = materials.lookup(u, v, label);
        let vis = oracle_visibility(body, frame.point, frame.normal, n, &env.geometry.directions);
        let payload = SurfacePayload { normal: n, visibility: &vis, albedo, roughness: rho };
        Ok(Some(light_transport(&payload, d * -1.0, env, opts)?))
    });
    let mut rgb = Image::zeros(w, h, 3);
    let mut mask = Image::zeros(w, h, 1);
    for (k, p) in pixels.into_iter().enumerate() {
        if let Some(c) = p? {
            for (ch, v) in c.iter().enumerate() {
                rgb.data[3 * k + ch] = *v as f32;
            }
            mask.data[k] = 1.0;
        }
    }
    Ok((rgb, mask))
}

/// Which environment lights a view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub split: Split,
    pub pose: usize,
    pub camera: Camera,
    pub image: Image,
    pub mask: Image,
}

/// Everything `gen-scene` writes, in memory.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub seed: u64,
    pub mesh: Arc<ProxyMesh>,
    /// `config.train_poses` training poses, then the held-out ones.
    pub poses: Vec<Pose>,
    pub materials: TrueMaterials,
    pub train_env: EnvironmentMap,
    pub held_out_env: EnvironmentMap,
    pub rig: Rig,
    /// Training views (rig camera `rig.train[k]`, training pose `k mod P`,
    /// training env), then held-out views (held-out cameras, first held-out
    /// pose, held-out env).
    pub views: Vec<View>,
}

impl SyntheticScene {
    pub fn generate(scene: &SceneConfig, rig_cfg: &RigConfig, seed: u64) -> Result<Self> {
        let mesh = Arc::new(ProxyMesh::build(&body_config(scene.body)).map_err(|e| Error::Config(format!("body: {e}")))?);
        let poses = generate_poses(scene.body, scene.train_poses + scene.held_out_poses, scene.pose_amplitude, seed);
        let materials = TrueMaterials::generate(&mesh, scene.material_res, seed);
        let train_env = train_environment(scene.env_height, scene.env_width);
        let held_out_env = held_out_environment(scene.env_height, scene.env_width);
        let rest = PosedBody::rest(mesh.clone())?;
        let rig = build_rig(rig_cfg, rest.bounds().center())?;
        let bodies: Vec<PosedBody> = poses.iter().map(|p| PosedBody::new(mesh.clone(), p)).collect::<std::result::Result<_, _>>()?;
        let opts = ShadingOptions::default();
        let mut views = Vec::new();
        for (k, ci) in rig.train.iter().enumerate() {
            let pose = k % scene.train_poses;
            let camera = rig.cameras[*ci].clone();
            let (image, mask) = oracle_render(&bodies[pose], &materials, &train_env, &camera, &opts)?;
            views.push(View { name: format!("train_{k:02}"), split: Split::Train, pose, camera, image, mask });
        }
        let pose = scene.train_poses;
        for (k, camera) in rig.held_out.iter().enumerate() {
            let (image, mask) = oracle_render(&bodies[pose], &materials, &held_out_env, camera, &opts)?;
            views.push(View { name: format!("heldout_{k:02}"), split: Split::HeldOut, pose, camera: camera.clone(), image, mask });
        }
        Ok(Self { config: scene.clone(), seed, mesh, poses, materials, train_env, held_out_env, rig, views })
    }

    pub fn posed(&self, pose: usize) -> Result<PosedBody> {
        Ok(PosedBody::new(self.mesh.clone(), &self.poses[pose])?)
    }

    pub fn views_of(&self, split: Split) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_scene() -> (PosedBody, TrueMaterials, Camera) {
        let mesh = Arc::new(ProxyMesh::build(&body_config(BodyKind::Sphere)).unwrap());
        let m = TrueMaterials::generate(&mesh, 32, 1);
        let body = PosedBody::rest(mesh).unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, -2.0, 0.9), Vec3::new(0.0, 0.0, 0.9), Vec3::Z, 0.5, 24, 24).unwrap();
        (body, m, cam)
    }

    #[test]
    fn zero_environment_renders_black() {
        let (body, m, cam) = sphere_scene();
        let env = EnvironmentMap::constant(8, 16, [0.0; 3]);
        let (img, mask) = oracle_render(&body, &m, &env, &cam, &ShadingOptions::default()).unwrap();
        assert!(img.data.iter().all(|v| *v == 0.0));
        assert!(mask.data.iter().filter(|v| **v == 1.0).count() > 100);
    }

    #[test]
    fn render_is_linear_in_the_environment() {
        let (body, m, cam) = sphere_scene();
        let (e1, e2) = (train_environment(8, 16), held_out_environment(8, 16));
        let sum = e1.add(&e2).unwrap();
        let opts = ShadingOptions::default();
        let a = oracle_render(&body, &m, &e1, &cam, &opts).unwrap().0;
        let b = oracle_render(&body, &m, &e2, &cam, &opts).unwrap().0;
        let s = oracle_render(&body, &m, &sum, &cam, &opts).unwrap().0;
        for k in 0..s.data.len() {
            assert!((s.data[k] - a.data[k] - b.data[k]).abs() < 1e-6, "{k}");
        }
    }

    #[test]
    fn top_of_the_head_sees_the_whole_upper_hemisphere() {
        let mesh = Arc::new(ProxyMesh::build(&BodyConfig::human()).unwrap());
        let body = PosedBody::rest(mesh).unwrap();
        let hit = body.raycast(Vec3::new(0.0, -0.01, 3.0), Vec3::new(0.0, 0.0, -1.0), 0.0, 10.0).unwrap();
        let f = body.frame_at(hit.face, hit.bary);
        assert!(f.point.z > 1.7, "{}", f.point.z);
        let n = body.smooth_normal(hit.face, hit.bary);
        let env = EnvironmentMap::constant(16, 32, [1.0; 3]);
        let dirs = &env.geometry.directions;
        let vis = oracle_visibility(&body, f.point, f.normal, n, dirs);
        let upper: Vec<f32> = dirs.iter().zip(&vis).filter(|(d, _)| d.z > 0.05 && d.dot(n) > 0.05).map(|(_, v)| *v).collect();
        assert!(upper.len() > 150);
        assert!(upper.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn lookups_stay_inside_the_chart() {
        let mesh = ProxyMesh::build(&BodyConfig::human()).unwrap();
        let m = TrueMaterials::generate(&mesh, 64, 3);
        let c = &mesh.charts[2];
        // at the chart corner the plain bilinear footprint reaches the gutter
        let (a, rho) = m.lookup(c.rect[0], c.rect[1], 3);
        let k = (((c.rect[1] * 64.0) as usize) * 64) + (c.rect[0] * 64.0) as usize;
        assert!(a.iter().all(|v| *v > 0.05));
        assert!(ROUGHNESS_LEVELS.iter().any(|r| (*r as f64 - rho).abs() < 1e-6), "{rho} {k}");
    }

    #[test]
    fn generation_is_deterministic() {
        let scene = SceneConfig { body: BodyKind::Sphere, material_res: 16, env_height: 4, env_width: 8, ..Default::default() };
        let rig = RigConfig { ring: 4, elevated: 2, train: 3, held_out: 2, width: 12, height: 12, ..Default::default() };
        let a = SyntheticScene::generate(&scene, &rig, 5).unwrap();
        let b = SyntheticScene::generate(&scene, &rig, 5).unwrap();
        assert_eq!(a.views, b.views);
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.views.len(), 5);
        assert_eq!(a.rig.train, vec![0, 2, 4]);
        let c = SyntheticScene::generate(&scene, &rig, 6).unwrap();
        assert_ne!(a.poses, c.poses);
    }

    #[test]
    fn the_oracle_does_not_import_training_code() {
        // gen-scene only goes through these two
        for (name, src) in [("scene.rs", include_str!("scene.rs")), ("dataset.rs", include_str!("dataset.rs"))] {
            let code = &src[..src.find("#[cfg(test)]").unwrap()];
            for m in ["density", "geomaps", "inpaint", "relight", "autodiff", "pipeline"] {
                let needle = format!("{m}::");
                assert!(!code.contains(&needle), "{name} mentions {needle}");
            }
        }
    }
}
