use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{Affine, Mat3, Vec3};
use crate::{Error, Result};

/// One bone: a joint (pivot) with a parent, and the capsule it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneSpec {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose pivot, metres.
    pub joint: Vec3,
    /// Capsule axis end points in the rest pose.
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
    /// Blend skinning weights with the parent near the joint.
    pub blend: bool,
}

/// Procedural proxy body description.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyConfig {
    pub bones: Vec<BoneSpec>,
    /// Target tessellation edge length, metres.
    pub edge_length: f64,
    /// Minimum vertices around a capsule.
    pub min_segments: usize,
    /// Gap between UV charts, in atlas units.
    pub gutter: f64,
    /// Half-width of the shell in which points get local coordinates.
    pub shell_half_width: f64,
    /// Half-length of the cosine weight blend around limb joints.
    pub blend_half_width: f64,
}

impl BodyConfig {
    /// Sixteen-joint human in an A-pose: Z up, feet at z = 0, facing −Y.
    pub fn human() -> Self {
        let v = Vec3::new;
        let arm = |s: f64| v(s * libm::sin(0.7), 0.0, -libm::cos(0.7));
        let mut bones = Vec::new();
        let mut add = |name: &str, parent: Option<usize>, joint: Vec3, a: Vec3, b: Vec3, radius: f64, blend: bool| {
            bones.push(BoneSpec { name: name.to_string(), parent, joint, a, b, radius, blend });
        };
        add("pelvis", None, v(0.0, 0.0, 0.95), v(-0.07, 0.0, 0.93), v(0.07, 0.0, 0.93), 0.11, false);
        add("spine", Some(0), v(0.0, 0.0, 1.05), v(0.0, 0.0, 1.06), v(0.0, 0.0, 1.2), 0.115, false);
        add("chest", Some(1), v(0.0, 0.0, 1.25), v(-0.07, 0.0, 1.36), v(0.07, 0.0, 1.36), 0.13, false);
        add("head", Some(2), v(0.0, 0.0, 1.5), v(0.0, 0.0, 1.6), v(0.0, -0.01, 1.66), 0.095, false);
        let (sl, sr) = (v(0.2, 0.0, 1.42), v(-0.2, 0.0, 1.42));
        let (el, er) = (sl + arm(1.0) * 0.27, sr + arm(-1.0) * 0.27);
        let (wl, wr) = (el + arm(1.0) * 0.24, er + arm(-1.0) * 0.24);
        add("l_shoulder", Some(2), sl, sl, el, 0.05, true);
        add("r_shoulder", Some(2), sr, sr, er, 0.05, true);
        add("l_elbow", Some(4), el, el, wl, 0.042, true);
        add("r_elbow", Some(5), er, er, wr, 0.042, true);
        add("l_wrist", Some(6), wl, wl, wl + arm(1.0) * 0.08, 0.037, true);
        add("r_wrist", Some(7), wr, wr, wr + arm(-1.0) * 0.08, 0.037, true);
        let (hl, hr) = (v(0.09, 0.0, 0.88), v(-0.09, 0.0, 0.88));
        let (kl, kr) = (v(0.095, 0.0, 0.48), v(-0.095, 0.0, 0.48));
        let (al, ar) = (v(0.1, 0.0, 0.09), v(-0.1, 0.0, 0.09));
        add("l_hip", Some(0), hl, hl, kl, 0.075, true);
        add("r_hip", Some(0), hr, hr, kr, 0.075, true);
        add("l_knee", Some(10), kl, kl, al, 0.055, true);
        add("r_knee", Some(11), kr, kr, ar, 0.055, true);
        add("l_ankle", Some(12), al, al, v(0.1, -0.13, 0.05), 0.045, true);
        add("r_ankle", Some(13), ar, ar, v(-0.1, -0.13, 0.05), 0.045, true);
        Self {
            bones,
            edge_length: 0.02,
            min_segments: 16,
            gutter: 1.0 / 32.0,
            shell_half_width: 0.08,
            blend_half_width: 0.03,
        }
    }

    /// A single sphere (zero-length capsule) of radius `r` centred at `c`.
    pub fn sphere(c: Vec3, r: f64) -> Self {
        Self {
            bones: vec![BoneSpec { name: "root".to_string(), parent: None, joint: c, a: c, b: c, radius: r, blend: false }],
            edge_length: 0.02,
            min_segments: 16,
            gutter: 1.0 / 32.0,
            shell_half_width: 0.08,
            blend_half_width: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bones.is_empty() {
            return Err(Error::invalid("body", "no bones"));
        }
        for (i, b) in self.bones.iter().enumerate() {
            if let Some(p) = b.parent {
                if p >= i {
                    return Err(Error::invalid("body", alloc::format!("bone {} must come after its parent", b.name)));
                }
            }
            if !(b.radius > 0.0) || !b.a.is_finite() || !b.b.is_finite() || !b.joint.is_finite() {
                return Err(Error::invalid("body", alloc::format!("bone {} has a bad capsule", b.name)));
            }
        }
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.edge_length) || !pos(self.shell_half_width) || !pos(self.blend_half_width) {
            return Err(Error::invalid("body", "edge length, shell and blend widths must be positive"));
        }
        if !(self.gutter >= 0.0 && self.gutter < 0.25) || self.min_segments < 3 {
            return Err(Error::invalid("body", "gutter must be in [0, 0.25) and min_segments >= 3"));
        }
        Ok(())
    }

    /// Exact signed distance to the union of rest-pose capsules.
    pub fn rest_sdf(&self, p: Vec3) -> f64 {
        self.bones
            .iter()
            .map(|b| capsule_sdf(p, b.a, b.b, b.radius))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn capsule_sdf(p: Vec3, a: Vec3, b: Vec3, r: f64) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sq();
    let t = if l2 > 0.0 { ((p - a).dot(ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm() - r
}

/// Relative joint rotations plus a global rigid transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    /// Axis-angle per joint, radians.
    pub joint_rotations: Vec<Vec3>,
    pub global_rotation: Mat3,
    pub global_translation: Vec3,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self {
            joint_rotations: vec![Vec3::ZERO; joints],
            global_rotation: Mat3::IDENTITY,
            global_translation: Vec3::ZERO,
        }
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.joint_rotations.len() != joints {
            return Err(Error::invalid(
                "pose",
                alloc::format!("{} joint rotations for {joints} joints", self.joint_rotations.len()),
            ));
        }
        let r = &self.global_rotation;
        if r.orthonormality_error() > 1e-6 || (r.det() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("pose", "global rotation is not orthonormal with det +1"));
        }
        if !self.global_translation.is_finite() || self.joint_rotations.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose", "non-finite values"));
        }
        Ok(())
    }

    /// Forward kinematics: per-joint rest-to-posed bone transforms, without
    /// the global transform.
    pub fn bone_transforms(&self, cfg: &BodyConfig) -> Vec<Affine> {
        let mut g: Vec<Affine> = Vec::with_capacity(cfg.bones.len());
        for (j, b) in cfg.bones.iter().enumerate() {
            let local = Affine::rotation_about(Mat3::from_axis_angle(self.joint_rotations[j]), b.joint);
            let t = match b.parent {
                Some(p) => g[p].compose(&local),
                None => local,
            };
            g.push(t);
        }
        g
    }

    pub fn global(&self) -> Affine {
        Affine::new(self.global_rotation, self.global_translation)
    }
}

/// Smooth step of the cosine blend: 0 at `t = −w`, ½ at 0, 1 at `+w`.
pub fn cosine_blend(t: f64, w: f64) -> f64 {
    if t <= -w {
        0.0
    } else if t >= w {
        1.0
    } else {
        0.5 - 0.5 * libm::cos(core::f64::consts::PI * (t + w) / (2.0 * w))
    }
}
