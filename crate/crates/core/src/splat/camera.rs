use serde::{Deserialize, Serialize};

use super::linalg::{cross3, dot3, mat3t_vec, normalize3, scale3, sub3, Mat3, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera space is x right, y down, z forward. Pixel `(i, j)` samples the
/// image plane at coordinates `(i, j)`, so `cx = 8` puts the principal
/// point on the center of pixel column 8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    /// Row-major 4×4 rigid transform.
    pub world_to_camera: [f32; 16],
}

impl Camera {
    pub fn new(width: u32, height: u32, fx: f32, fy: f32, cx: f32, cy: f32) -> Self {
        let mut world_to_camera = [0.0; 16];
        for i in 0..4 {
            world_to_camera[i * 5] = 1.0;
        }
        Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        width: u32,
        height: u32,
        fx: f32,
        fy: f32,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Self {
        let forward = normalize3(sub3(target, eye));
        // y points down in camera space
        let right = normalize3(cross3(forward, up));
        let down = cross3(forward, right);
        let rot = [right, down, forward];
        let mut cam = Camera::new(
            width,
            height,
            fx,
            fy,
            width as f32 / 2.0,
            height as f32 / 2.0,
        );
        cam.set_pose(&rot, scale3([dot3(right, eye), dot3(down, eye), dot3(forward, eye)], -1.0));
        cam
    }

    pub fn set_pose(&mut self, rotation: &Mat3, translation: Vec3) {
        for i in 0..3 {
            for j in 0..3 {
                self.world_to_camera[i * 4 + j] = rotation[i][j];
            }
            self.world_to_camera[i * 4 + 3] = translation[i];
        }
        self.world_to_camera[12..].copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.world_to_camera;
        [
            [m[0], m[1], m[2]],
            [m[4], m[5], m[6]],
            [m[8], m[9], m[10]],
        ]
    }

    pub fn translation(&self) -> Vec3 {
        let m = &self.world_to_camera;
        [m[3], m[7], m[11]]
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        scale3(mat3t_vec(&self.rotation(), self.translation()), -1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same pose and field of view at a different resolution.
    pub fn resized(&self, width: u32, height: u32) -> Camera {
        let sx = width as f32 / self.width as f32;
        let sy = height as f32 / self.height as f32;
        Camera {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            world_to_camera: self.world_to_camera,
        }
    }

    /// Checks intrinsics and that the rotation block is orthonormal within `tol`.
    pub fn validate(&self, tol: f32) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera has zero-sized image"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f32)
            || !(self.cy >= 0.0 && self.cy < self.height as f32)
        {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if self.world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite world_to_camera"));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let rtr = r[0][i] * r[0][j] + r[1][i] * r[1][j] + r[2][i] * r[2][j];
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr - expect).abs() > tol {
                    return Err(Error::invalid(format!(
                        "rotation block is not orthonormal (RᵀR[{i}][{j}] = {rtr})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at(32, 32, 30.0, 30.0, [0.0, 1.0, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        cam.validate(1e-5).unwrap();
        let r = cam.rotation();
        let t = cam.translation();
        let pc = super::super::linalg::add3(super::super::linalg::mat3_vec(&r, [0.0; 3]), t);
        assert!(pc[0].abs() < 1e-6 && pc[1].abs() < 1e-6 && pc[2] > 3.0);
        let c = cam.center();
        assert!((c[1] - 1.0).abs() < 1e-5 && (c[2] + 3.0).abs() < 1e-5);
        // world up projects to image up (negative camera y)
        let up_cam = super::super::linalg::mat3_vec(&r, [0.0, 1.0, 0.0]);
        assert!(up_cam[1] < 0.0);
    }

    #[test]
    fn rejects_skewed_rotation() {
        let mut cam = Camera::new(16, 16, 10.0, 10.0, 8.0, 8.0);
        cam.world_to_camera[1] = 0.1;
        assert!(cam.validate(1e-3).is_err());
    }
}
