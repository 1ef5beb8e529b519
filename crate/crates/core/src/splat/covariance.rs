//! 3D covariance from a rotation quaternion and log-scales, `Σ = R S Sᵀ Rᵀ`.

use super::linalg::{transpose3, Mat3, Vec3};

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f32; 4]) -> Mat3 {
    let [w, x, y, z] = normalize_quat(q);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn normalize_quat(q: [f32; 4]) -> [f32; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// `M = R·S`; the covariance is `M Mᵀ`.
fn scaled_rotation(rotation: [f32; 4], log_scale: Vec3) -> (Mat3, Mat3, Vec3) {
    let r = rotation_matrix(rotation);
    let s = log_scale.map(f32::exp);
    let mut m = r;
    for row in m.iter_mut() {
        for k in 0..3 {
            row[k] *= s[k];
        }
    }
    (r, m, s)
}

pub fn build_covariance(rotation: [f32; 4], log_scale: Vec3) -> Mat3 {
    let (_, m, _) = scaled_rotation(rotation, log_scale);
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    cov
}

/// Gradients of `⟨upstream, Σ⟩` with respect to the raw (unnormalized)
/// quaternion and the log-scales. `upstream` is a full 3×3 gradient; it need
/// not be symmetric.
pub fn build_covariance_backward(
    upstream: &Mat3,
    rotation: [f32; 4],
    log_scale: Vec3,
) -> ([f32; 4], Vec3) {
    let (r, m, s) = scaled_rotation(rotation, log_scale);
    // dL/dM = (G + Gᵀ) M
    let gt = transpose3(upstream);
    let mut gm = [[0.0f32; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += (upstream[i][k] + gt[i][k]) * m[k][j];
            }
            gm[i][j] = acc;
        }
    }

    let mut grad_log_scale = [0.0f32; 3];
    let mut gr = [[0.0f32; 3]; 3];
    for k in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += gm[i][k] * r[i][k];
            gr[i][k] = gm[i][k] * s[k];
        }
        grad_log_scale[k] = ds * s[k];
    }

    let qn = normalize_quat(rotation);
    let [w, x, y, z] = qn;
    let gw = 2.0
        * (-z * gr[0][1] + y * gr[0][2] + z * gr[1][0] - x * gr[1][2] - y * gr[2][0]
            + x * gr[2][1]);
    let gx = 2.0
        * (y * gr[0][1] + z * gr[0][2] + y * gr[1][0] - 2.0 * x * gr[1][1] - w * gr[1][2]
            + z * gr[2][0]
            + w * gr[2][1]
            - 2.0 * x * gr[2][2]);
    let gy = 2.0
        * (-2.0 * y * gr[0][0] + x * gr[0][1] + w * gr[0][2] + x * gr[1][0] + z * gr[1][2]
            - w * gr[2][0]
            + z * gr[2][1]
            - 2.0 * y * gr[2][2]);
    let gz = 2.0
        * (-2.0 * z * gr[0][0] - w * gr[0][1] + x * gr[0][2] + w * gr[1][0]
            - 2.0 * z * gr[1][1]
            + y * gr[1][2]
            + x * gr[2][0]
            + y * gr[2][1]);
    let gq = [gw, gx, gy, gz];

    // through q̂ = q / |q|
    let norm = (rotation.iter().map(|v| v * v).sum::<f32>()).sqrt();
    let proj: f32 = (0..4).map(|i| gq[i] * qn[i]).sum();
    let grad_rotation = [0, 1, 2, 3].map(|i| (gq[i] - qn[i] * proj) / norm);
    (grad_rotation, grad_log_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::linalg::IDENTITY3;

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f32) {
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - b[i][j]).abs() < tol, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn identity_case() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_mat_close(&c, &IDENTITY3, 1e-7);
    }

    #[test]
    fn axis_aligned_scaling() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [2f32.ln(), 0.0, 0.0]);
        assert_mat_close(&c, &[[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 1e-6);
    }

    #[test]
    fn rotation_swaps_principal_axes() {
        let h = std::f32::consts::FRAC_PI_4;
        let c = build_covariance([h.cos(), 0.0, 0.0, h.sin()], [2f32.ln(), 0.0, 0.0]);
        assert_mat_close(&c, &[[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]], 1e-5);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (gq, gs) = build_covariance_backward(&[[0.0; 3]; 3], [0.3, 0.1, -0.4, 0.8], [0.1, -0.2, 0.3]);
        assert_eq!(gq, [0.0; 4]);
        assert_eq!(gs, [0.0; 3]);
    }

    #[test]
    fn trace_gradient_at_identity() {
        let (gq, gs) = build_covariance_backward(&IDENTITY3, [1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        for v in gs {
            assert!((v - 2.0).abs() < 1e-6);
        }
        // trace is rotation invariant
        for v in gq {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn unnormalized_quaternion_is_normalized() {
        let a = build_covariance([2.0, 0.4, -0.2, 1.0], [0.1, 0.2, -0.3]);
        let b = build_covariance(normalize_quat([2.0, 0.4, -0.2, 1.0]), [0.1, 0.2, -0.3]);
        assert_mat_close(&a, &b, 1e-6);
    }
}
