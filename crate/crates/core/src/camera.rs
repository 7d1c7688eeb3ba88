//! Pinhole cameras. Camera space is x right, y down, z forward; pixel `(i, j)`
//! has its centre at `(i + 0.5, j + 0.5)`.

use crate::math::{Mat3, Vec3};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` roughly up in the image
    /// and vertical field of view `fov_y` (radians).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let f = (target - eye).normalized();
        let r = f.cross(up);
        if r.norm() < 1e-9 || !f.is_finite() || width == 0 || height == 0 {
            return Err(Error::invalid("camera", "degenerate look-at frame"));
        }
        let r = r.normalized();
        let down = f.cross(r);
        let rotation = Mat3::from_rows(r.to_array(), down.to_array(), f.to_array());
        let translation = -(rotation * eye);
        let fy = 0.5 * height as f64 / libm::tan(0.5 * fov_y);
        Ok(Self {
            width,
            height,
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation,
            translation,
        })
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn forward(&self) -> Vec3 {
        Vec3::from_array(self.rotation.m[2])
    }

    /// Unit world-space ray through continuous pixel coordinates.
    pub fn ray(&self, px: f64, py: f64) -> (Vec3, Vec3) {
        let d = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0);
        (self.center(), (self.rotation.transpose() * d).normalized())
    }

    pub fn pixel_ray(&self, x: usize, y: usize) -> (Vec3, Vec3) {
        self.ray(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Continuous pixel coordinates and camera-space depth of `p`, if it is
    /// in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.rotation * p + self.translation;
        (c.z > 1e-9).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// `[R | t]` as a row-major 3×4 matrix.
    pub fn extrinsic_rows(&self) -> [[f64; 4]; 3] {
        let r = &self.rotation.m;
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
        ]
    }

    pub fn from_extrinsic_rows(
        width: usize,
        height: usize,
        intr: [f64; 4],
        rows: [[f64; 4]; 3],
    ) -> Result<Self> {
        let rotation = Mat3::from_rows(
            [rows[0][0], rows[0][1], rows[0][2]],
            [rows[1][0], rows[1][1], rows[1][2]],
            [rows[2][0], rows[2][1], rows[2][2]],
        );
        if rotation.orthonormality_error() > 1e-5 || rotation.det() < 0.0 {
            return Err(Error::invalid("camera", "rotation block is not a proper rotation"));
        }
        if width == 0 || height == 0 || intr[0] <= 0.0 || intr[1] <= 0.0 {
            return Err(Error::invalid("camera", "non-positive size or focal length"));
        }
        Ok(Self {
            width,
            height,
            fx: intr[0],
            fy: intr[1],
            cx: intr[2],
            cy: intr[3],
            rotation,
            translation: Vec3::new(rows[0][3], rows[1][3], rows[2][3]),
        })
    }
}
