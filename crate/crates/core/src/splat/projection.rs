//! Local-affine (EWA) projection of a 3D Gaussian to the image plane.

use super::camera::Camera;
use super::linalg::{
    add3, mat23_mul23t, mat23_mul33, mat23t_mul22_mul23, mat3_vec, mat3t_vec, Mat2, Mat2x3, Mat3,
    Vec3,
};

/// Added to both diagonal entries of the screen covariance, in px².
pub const LOW_PASS: f32 = 0.3;
pub const DEFAULT_NEAR_PLANE: f32 = 0.01;
/// Footprint half-extent in standard deviations.
pub const FOOTPRINT_SIGMA: f32 = 3.0;
/// Determinants below this make the screen covariance unusable.
pub const MIN_DETERMINANT: f32 = 1e-12;

// Slack on footprint bounds so the per-pixel ellipse test, evaluated in f32,
// can never accept a pixel outside the box.
const FOOTPRINT_PAD: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f32; 2],
    /// Screen covariance including the low-pass term.
    pub cov2d: Mat2,
    pub depth: f32,
    pub jacobian: Mat2x3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CullReason {
    NearPlane,
    OffScreen,
    Degenerate,
}

impl ProjectedGaussian {
    /// Inverse screen covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [f32; 3] {
        let [[a, b], [_, c]] = self.cov2d;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    pub fn determinant(&self) -> f32 {
        self.cov2d[0][0] * self.cov2d[1][1] - self.cov2d[0][1] * self.cov2d[0][1]
    }

    /// Half-extents of the axis-aligned box around the 3σ ellipse.
    pub fn footprint(&self) -> [f32; 2] {
        [
            FOOTPRINT_SIGMA * self.cov2d[0][0].sqrt() + FOOTPRINT_PAD,
            FOOTPRINT_SIGMA * self.cov2d[1][1].sqrt() + FOOTPRINT_PAD,
        ]
    }
}

/// Camera-space point and the 2×3 Jacobian of the pinhole projection there.
pub fn projection_jacobian(camera: &Camera, t: Vec3) -> Mat2x3 {
    let inv_z = 1.0 / t[2];
    let inv_z2 = inv_z * inv_z;
    [
        [camera.fx * inv_z, 0.0, -camera.fx * t[0] * inv_z2],
        [0.0, camera.fy * inv_z, -camera.fy * t[1] * inv_z2],
    ]
}

/// `J W Σ Wᵀ Jᵀ` without the low-pass term.
pub fn screen_covariance(jacobian: &Mat2x3, rotation: &Mat3, cov3d: &Mat3) -> Mat2 {
    let t = mat23_mul33(jacobian, rotation);
    let ts = mat23_mul33(&t, cov3d);
    let mut c = mat23_mul23t(&ts, &t);
    let off = 0.5 * (c[0][1] + c[1][0]);
    c[0][1] = off;
    c[1][0] = off;
    c
}

pub fn project_gaussian(
    position: Vec3,
    cov3d: &Mat3,
    camera: &Camera,
    near_plane: f32,
) -> Result<ProjectedGaussian, CullReason> {
    let w = camera.rotation();
    let t = add3(mat3_vec(&w, position), camera.translation());
    if !(t[2] > near_plane) {
        return Err(CullReason::NearPlane);
    }
    let jacobian = projection_jacobian(camera, t);
    let mut cov2d = screen_covariance(&jacobian, &w, cov3d);
    cov2d[0][0] += LOW_PASS;
    cov2d[1][1] += LOW_PASS;
    let mean2d = [
        camera.fx * t[0] / t[2] + camera.cx,
        camera.fy * t[1] / t[2] + camera.cy,
    ];
    let p = ProjectedGaussian {
        mean2d,
        cov2d,
        depth: t[2],
        jacobian,
    };
    let det = p.determinant();
    if !(det >= MIN_DETERMINANT) || !mean2d.iter().all(|v| v.is_finite()) {
        return Err(CullReason::Degenerate);
    }
    let [rx, ry] = p.footprint();
    let max_x = camera.width as f32 - 1.0;
    let max_y = camera.height as f32 - 1.0;
    if mean2d[0] + rx < 0.0 || mean2d[0] - rx > max_x || mean2d[1] + ry < 0.0 || mean2d[1] - ry > max_y
    {
        return Err(CullReason::OffScreen);
    }
    Ok(p)
}

/// Chains gradients on the screen mean and the (symmetric) screen covariance
/// back to the world position and the 3D covariance.
pub fn project_gaussian_backward(
    position: Vec3,
    cov3d: &Mat3,
    camera: &Camera,
    grad_mean2d: [f32; 2],
    grad_cov2d: &Mat2,
) -> (Vec3, Mat3) {
    let w = camera.rotation();
    let t = add3(mat3_vec(&w, position), camera.translation());
    let jacobian = projection_jacobian(camera, t);
    let tm = mat23_mul33(&jacobian, &w);

    // symmetrize so the split between the two off-diagonal entries is irrelevant
    let off = 0.5 * (grad_cov2d[0][1] + grad_cov2d[1][0]);
    let g = [[grad_cov2d[0][0], off], [off, grad_cov2d[1][1]]];

    let grad_cov3d = mat23t_mul22_mul23(&tm, &g);

    // dL/dT = 2 G T Σ, dL/dJ = dL/dT Wᵀ
    let ts = mat23_mul33(&tm, cov3d);
    let mut grad_t = [[0.0f32; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            grad_t[i][j] = 2.0 * (g[i][0] * ts[0][j] + g[i][1] * ts[1][j]);
        }
    }
    let mut grad_j = [[0.0f32; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            grad_j[i][j] = grad_t[i][0] * w[j][0] + grad_t[i][1] * w[j][1] + grad_t[i][2] * w[j][2];
        }
    }

    let (fx, fy) = (camera.fx, camera.fy);
    let inv_z = 1.0 / t[2];
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut gt = [0.0f32; 3];
    // mean
    gt[0] += grad_mean2d[0] * fx * inv_z;
    gt[1] += grad_mean2d[1] * fy * inv_z;
    gt[2] -= grad_mean2d[0] * fx * t[0] * inv_z2 + grad_mean2d[1] * fy * t[1] * inv_z2;
    // Jacobian entries
    gt[0] -= grad_j[0][2] * fx * inv_z2;
    gt[1] -= grad_j[1][2] * fy * inv_z2;
    gt[2] += -grad_j[0][0] * fx * inv_z2 - grad_j[1][1] * fy * inv_z2
        + grad_j[0][2] * 2.0 * fx * t[0] * inv_z3
        + grad_j[1][2] * 2.0 * fy * t[1] * inv_z3;

    (mat3t_vec(&w, gt), grad_cov3d)
}
