//! Plain-text camera and skeleton animation files. Blank lines and lines
//! starting with `#` are ignored. Numbers are written in Rust's shortest
//! round-trip form, so write → read is exact.

use std::fmt::Write as _;
use std::path::Path;

use uvrelight_core::body::Pose;
use uvrelight_core::camera::Camera;
use uvrelight_core::math::{Mat3, Vec3};

use super::{read_text, write_file};
use crate::{Error, Result};

fn data_lines(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn numbers(line: &str, no: usize) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("line {no}: bad number `{t}`")))
        .collect()
}

fn join(vals: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in vals.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

/// `width height fx fy cx cy`, then the world-to-camera `[R | t]` as three
/// rows of four.
pub fn encode_camera(c: &Camera) -> String {
    let mut s = format!("{} {} {}\n", c.width, c.height, join([c.fx, c.fy, c.cx, c.cy]));
    for r in c.extrinsic_rows() {
        s += &join(r);
        s.push('\n');
    }
    s
}

pub fn decode_camera(s: &str) -> std::result::Result<Camera, String> {
    let lines: Vec<(usize, &str)> = data_lines(s).collect();
    if lines.len() != 4 {
        return Err(format!("expected 4 data lines, found {}", lines.len()));
    }
    let head = numbers(lines[0].1, lines[0].0)?;
    if head.len() != 6 || head[0] < 1.0 || head[1] < 1.0 || head[0].fract() != 0.0 || head[1].fract() != 0.0 {
        return Err("first line must be `width height fx fy cx cy`".into());
    }
    let mut rows = [[0.0; 4]; 3];
    for (r, (no, l)) in rows.iter_mut().zip(&lines[1..]) {
        let v = numbers(l, *no)?;
        if v.len() != 4 {
            return Err(format!("line {no}: expected 4 values"));
        }
        r.copy_from_slice(&v);
    }
    Camera::from_extrinsic_rows(head[0] as usize, head[1] as usize, [head[2], head[3], head[4], head[5]], rows)
        .map_err(|e| e.to_string())
}

/// One line per frame: index, `J × 3` axis-angle values, the 9 entries of
/// the global rotation (row-major) and the 3 of the global translation.
pub fn encode_animation(poses: &[Pose]) -> String {
    let mut s = String::new();
    for (i, p) in poses.iter().enumerate() {
        let vals = p
            .joint_rotations
            .iter()
            .flat_map(|r| r.to_array())
            .chain(p.global_rotation.to_row_major())
            .chain(p.global_translation.to_array());
        writeln!(s, "{i} {}", join(vals)).unwrap();
    }
    s
}

/// Frames in file order; indices must count up from 0.
pub fn decode_animation(s: &str) -> std::result::Result<Vec<Pose>, String> {
    let mut out: Vec<Pose> = Vec::new();
    for (no, l) in data_lines(s) {
        let v = numbers(l, no)?;
        if v.len() < 13 || (v.len() - 13) % 3 != 0 {
            return Err(format!("line {no}: {} values is not 1 + 3J + 12", v.len()));
        }
        if v[0] != out.len() as f64 {
            return Err(format!("line {no}: frame index {} where {} was expected", v[0], out.len()));
        }
        let j = (v.len() - 13) / 3;
        if let Some(first) = out.first() {
            if first.joint_rotations.len() != j {
                return Err(format!("line {no}: {j} joints, earlier frames have {}", first.joint_rotations.len()));
            }
        }
        let joint_rotations = (0..j).map(|k| Vec3::new(v[1 + 3 * k], v[2 + 3 * k], v[3 + 3 * k])).collect();
        let r = &v[1 + 3 * j..];
        let pose = Pose {
            joint_rotations,
            global_rotation: Mat3::from_row_major(&r[..9]),
            global_translation: Vec3::new(r[9], r[10], r[11]),
        };
        pose.validate(j).map_err(|e| format!("line {no}: {e}"))?;
        out.push(pose);
    }
    if out.is_empty() {
        return Err("no frames".into());
    }
    Ok(out)
}

pub fn write_camera(path: &Path, c: &Camera) -> Result<()> {
    write_file(path, encode_camera(c).as_bytes())
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    decode_camera(&read_text(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_animation(path: &Path, poses: &[Pose]) -> Result<()> {
    write_file(path, encode_animation(poses).as_bytes())
}

pub fn read_animation(path: &Path) -> Result<Vec<Pose>> {
    decode_animation(&read_text(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn camera_layout() {
        let c = Camera::look_at(Vec3::new(0.0, -3.0, 1.0), Vec3::new(0.0, 0.0, 1.0), Vec3::Z, 0.7, 64, 48).unwrap();
        let s = encode_camera(&c);
        assert_eq!(s.lines().count(), 4);
        assert!(s.starts_with("64 48 "));
        assert_eq!(decode_camera(&s).unwrap(), c);
        let commented = format!("# rig camera 3\n\n{s}");
        assert_eq!(decode_camera(&commented).unwrap(), c);
    }

    #[test]
    fn bad_cameras_are_rejected() {
        assert!(decode_camera("64 48 1 1 32 24\n1 0 0 0\n0 1 0 0\n").is_err());
        assert!(decode_camera("64 48 1 1 32 24\n2 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(decode_camera("64.5 48 1 1 32 24\n1 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(decode_camera("64 48 1 1 32 24\n1 0 0 x\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(decode_camera("64 48 1 1 32 24\n1 0 0 0\n0 1 0 0\n0 0 1 0 5\n").is_err());
        assert!(decode_camera("64 48 1 1 32 24\n1 0 0 0\n0 1 0 0\n0 0 1 NaN\n").is_err());
    }

    #[test]
    fn animation_layout() {
        let mut p = Pose::identity(2);
        p.joint_rotations[1] = Vec3::new(0.1, -0.2, 0.3);
        p.global_translation = Vec3::new(1.0, 2.0, 3.0);
        let s = encode_animation(&[Pose::identity(2), p.clone()]);
        let second = s.lines().nth(1).unwrap();
        assert_eq!(second, "1 0 0 0 0.1 -0.2 0.3 1 0 0 0 1 0 0 0 1 1 2 3");
        assert_eq!(decode_animation(&s).unwrap()[1], p);
    }

    #[test]
    fn bad_animations_are_rejected() {
        let ok = "0 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0\n";
        assert!(decode_animation(ok).is_ok());
        assert!(decode_animation("").is_err());
        assert!(decode_animation(&ok.replace("0 0 0 0 1", "1 0 0 0 1")).is_err());
        assert!(decode_animation("0 0 0 1 0 0 0 1 0 0 0 1 0 0 0\n").is_err());
        assert!(decode_animation("0 0 0 0 2 0 0 0 1 0 0 0 1 0 0 0\n").is_err());
        let mixed = format!("{ok}1 0 0 0 0 0 0 1 0 0 0 1 0 0 0 1 0 0 0\n");
        assert!(decode_animation(&mixed).is_err());
    }

    proptest! {
        #[test]
        fn animations_round_trip(j in 0usize..5, seed in any::<u64>(), frames in 1usize..4) {
            let f = |k: u64| ((seed.wrapping_add(k).wrapping_mul(0x9e3779b97f4a7c15) >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2.0;
            let poses: Vec<Pose> = (0..frames)
                .map(|i| {
                    let mut p = Pose::identity(j);
                    for (k, r) in p.joint_rotations.iter_mut().enumerate() {
                        *r = Vec3::new(f((i * 31 + k) as u64), f((i * 31 + k + 7) as u64), f((i * 31 + k + 13) as u64));
                    }
                    p.global_rotation = Mat3::from_axis_angle(Vec3::new(f(i as u64 + 100), 0.3, -0.2));
                    p.global_translation = Vec3::new(f(i as u64 + 200), 1e-7, 12345.678);
                    p
                })
                .collect();
            prop_assert_eq!(decode_animation(&encode_animation(&poses)).unwrap(), poses);
        }
    }
}
