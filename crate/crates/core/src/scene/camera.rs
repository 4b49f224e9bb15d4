use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Vec3};

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
///
/// Pixel `(x, y)` has its center at image coordinates `(x, y)`, so the
/// principal point `(cx, cy)` of a W×H image is usually `((W-1)/2, (H-1)/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, fov_x_deg: f64) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Camera {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            near: 0.01,
            far: 100.0,
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        let r = &self.rotation;
        Mat3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::new(self.translation[0], self.translation[1], self.translation[2])
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation_vec())
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation_vec()
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix().transpose() * (p - self.translation_vec())
    }

    /// Image coordinates and camera-space depth of a world point.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let c = self.world_to_camera(p);
        (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z)
    }

    /// World point at camera-space depth `z` behind image coordinates (u, v).
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        let c = Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        self.camera_to_world(&c)
    }

    /// Unit world-space direction of the ray through image coordinates (u, v).
    pub fn ray_dir(&self, u: f64, v: f64) -> Vec3 {
        let c = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation_matrix().transpose() * c).normalize()
    }

    /// NDC depth in [-1, 1] for camera-space depth `z`.
    pub fn ndc_depth(&self, z: f64) -> f64 {
        let (n, f) = (self.near, self.far);
        (f + n) / (f - n) - 2.0 * f * n / ((f - n) * z)
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.fx > 0.0 && self.fy > 0.0) {
            v.push("focal length not positive".to_string());
        }
        if !(self.near > 0.0 && self.near < self.far) {
            v.push("clip range invalid (need 0 < near < far)".to_string());
        }
        if self.width == 0 || self.height == 0 {
            v.push("empty image size".to_string());
        }
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if !(err <= 1e-6) {
            v.push(format!("rotation not orthonormal (error {err:.2e})"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(Vec3::new(2.0, -1.0, 1.5), Vec3::new(0.1, 0.2, 0.0), Vec3::z(), 65, 33, 50.0);
        let (u, v, z) = cam.project(&Vec3::new(0.1, 0.2, 0.0));
        assert!((u - 32.0).abs() < 1e-9 && (v - 16.0).abs() < 1e-9 && z > 0.0);
        assert!(cam.violations().is_empty());
        assert!((cam.center() - Vec3::new(2.0, -1.0, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn unproject_inverts_project() {
        let cam = Camera::look_at(Vec3::new(0.0, -3.0, 1.0), Vec3::zeros(), Vec3::z(), 40, 30, 60.0);
        let p = Vec3::new(0.3, 0.2, -0.1);
        let (u, v, z) = cam.project(&p);
        assert!((cam.unproject(u, v, z) - p).norm() < 1e-12);
        let d = cam.ray_dir(u, v);
        assert!(((p - cam.center()).normalize() - d).norm() < 1e-12);
    }
}
