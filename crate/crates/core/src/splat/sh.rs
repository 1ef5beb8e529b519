//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Basis ordering and signs follow the usual Gaussian-splatting convention,
//! so coefficients exported by other splatting tools evaluate identically.
//! Rendered color is `max(0.5 + Σ c·Y, 0)` per channel.

use super::linalg::Vec3;
use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 3;
pub const MAX_BASIS: usize = 16;

pub const SH_C0: f32 = 0.282_094_8;
const SH_C1: f32 = 0.488_602_5;
const SH_C2: [f32; 5] = [
    1.092_548_4,
    -1.092_548_4,
    0.315_391_57,
    -1.092_548_4,
    0.546_274_2,
];
const SH_C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_34,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

pub const fn basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub const fn coeff_count(degree: usize) -> usize {
    3 * basis_count(degree)
}

/// Converts an rgb color in `[0, 1]` to the DC coefficient producing it.
pub fn rgb_to_dc(c: f32) -> f32 {
    (c - 0.5) / SH_C0
}

pub fn dc_to_rgb(dc: f32) -> f32 {
    0.5 + SH_C0 * dc
}

/// Basis values at `dir`. Only the first `basis_count(degree)` entries are set.
pub fn basis(degree: usize, dir: Vec3) -> [f32; MAX_BASIS] {
    let [x, y, z] = dir;
    let mut b = [0.0f32; MAX_BASIS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn basis_gradient(degree: usize, dir: Vec3) -> [Vec3; MAX_BASIS] {
    let [x, y, z] = dir;
    let mut g = [[0.0f32; 3]; MAX_BASIS];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        if degree >= 3 {
            g[9] = [
                SH_C3[0] * 6.0 * x * y,
                SH_C3[0] * (3.0 * xx - 3.0 * yy),
                0.0,
            ];
            g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
            g[11] = [
                SH_C3[2] * -2.0 * x * y,
                SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
                SH_C3[2] * 8.0 * y * z,
            ];
            g[12] = [
                SH_C3[3] * -6.0 * x * z,
                SH_C3[3] * -6.0 * y * z,
                SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
                SH_C3[4] * -2.0 * x * y,
                SH_C3[4] * 8.0 * x * z,
            ];
            g[14] = [
                SH_C3[5] * 2.0 * x * z,
                SH_C3[5] * -2.0 * y * z,
                SH_C3[5] * (xx - yy),
            ];
            g[15] = [
                SH_C3[6] * (3.0 * xx - 3.0 * yy),
                SH_C3[6] * -6.0 * x * y,
                0.0,
            ];
        }
    }
    g
}

fn check_len(coeffs: &[f32], degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        return Err(Error::invalid(format!("SH degree {degree} > {MAX_DEGREE}")));
    }
    if coeffs.len() != coeff_count(degree) {
        return Err(Error::invalid(format!(
            "degree {degree} needs {} SH coefficients, got {}",
            coeff_count(degree),
            coeffs.len()
        )));
    }
    Ok(())
}

/// Pre-clamp color `0.5 + Σ c·Y`.
pub(crate) fn eval_unclamped(coeffs: &[f32], degree: usize, basis: &[f32; MAX_BASIS]) -> Vec3 {
    let mut rgb = [0.5f32; 3];
    for (b, chunk) in basis[..basis_count(degree)].iter().zip(coeffs.chunks_exact(3)) {
        rgb[0] += b * chunk[0];
        rgb[1] += b * chunk[1];
        rgb[2] += b * chunk[2];
    }
    rgb
}

pub fn eval_sh(coeffs: &[f32], view_dir: Vec3, degree: usize) -> Result<Vec3> {
    check_len(coeffs, degree)?;
    let b = basis(degree, view_dir);
    Ok(eval_unclamped(coeffs, degree, &b).map(|v| v.max(0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShGrad {
    pub coeffs: Vec<f32>,
    /// Gradient with respect to the (unit) direction components.
    pub view_dir: Vec3,
}

/// Gradient of `⟨upstream, eval_sh(coeffs, dir)⟩`. Channels whose pre-clamp
/// value is negative pass no gradient.
pub fn eval_sh_backward(
    upstream: Vec3,
    coeffs: &[f32],
    view_dir: Vec3,
    degree: usize,
) -> Result<ShGrad> {
    check_len(coeffs, degree)?;
    let b = basis(degree, view_dir);
    let raw = eval_unclamped(coeffs, degree, &b);
    let g = [0, 1, 2].map(|c| if raw[c] < 0.0 { 0.0 } else { upstream[c] });
    let n = basis_count(degree);
    let mut grad = vec![0.0f32; 3 * n];
    for k in 0..n {
        for c in 0..3 {
            grad[k * 3 + c] = g[c] * b[k];
        }
    }
    let bg = basis_gradient(degree, view_dir);
    let mut gd = [0.0f32; 3];
    for k in 1..n {
        let s = g[0] * coeffs[k * 3] + g[1] * coeffs[k * 3 + 1] + g[2] * coeffs[k * 3 + 2];
        for a in 0..3 {
            gd[a] += s * bg[k][a];
        }
    }
    Ok(ShGrad {
        coeffs: grad,
        view_dir: gd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_offset_convention() {
        assert_eq!(eval_sh(&[0.0; 3], [0.0, 0.0, 1.0], 0).unwrap(), [0.5; 3]);
        let c = 0.7;
        let rgb = eval_sh(&[c; 3], [1.0, 0.0, 0.0], 0).unwrap();
        let expect = 0.5 + c / (2.0 * std::f32::consts::PI.sqrt());
        for v in rgb {
            assert!((v - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_count_is_rejected() {
        assert!(eval_sh(&[0.0; 5], [0.0, 0.0, 1.0], 0).is_err());
        assert!(eval_sh(&[0.0; 12], [0.0, 0.0, 1.0], 2).is_err());
        assert!(eval_sh(&[0.0; 64 * 3], [0.0, 0.0, 1.0], 7).is_err());
    }

    #[test]
    fn dc_gradient_is_y00() {
        let g = eval_sh_backward([1.0, 0.0, 0.0], &[0.0; 3], [0.0, 1.0, 0.0], 0).unwrap();
        assert!((g.coeffs[0] - SH_C0).abs() < 1e-7);
        assert_eq!(&g.coeffs[1..], &[0.0, 0.0]);
    }

    #[test]
    fn clamped_channel_has_zero_gradient() {
        // red pre-clamp value 0.5 + Y00 * (-5) < 0
        let coeffs = [-5.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let dir = [0.0, 0.0, 1.0];
        assert_eq!(eval_sh(&coeffs, dir, 1).unwrap()[0], 0.0);
        let g = eval_sh_backward([1.0, 1.0, 1.0], &coeffs, dir, 1).unwrap();
        for k in 0..4 {
            assert_eq!(g.coeffs[k * 3], 0.0);
        }
        assert!(g.coeffs[1] > 0.0);
    }

    #[test]
    fn degree_one_terms_are_odd() {
        let coeffs = [0.9, -0.3, 0.2, 0.4, -0.5, 0.1, 0.3, 0.2, -0.7, -0.2, 0.6, 0.8];
        let d = super::super::linalg::normalize3([0.3, -0.5, 0.8]);
        let nd = d.map(|v| -v);
        let b = basis(1, d);
        let nb = basis(1, nd);
        assert_eq!(b[0], nb[0]);
        for k in 1..4 {
            assert_eq!(b[k], -nb[k]);
        }
        // contributions above the DC term flip sign
        let dc = eval_unclamped(&coeffs[..3], 0, &b);
        let p = eval_unclamped(&coeffs, 1, &b);
        let n = eval_unclamped(&coeffs, 1, &nb);
        for c in 0..3 {
            assert!(((p[c] - dc[c]) + (n[c] - dc[c])).abs() < 1e-6);
        }
    }

    #[test]
    fn higher_degree_with_only_dc_matches_degree_zero() {
        let dir = super::super::linalg::normalize3([0.2, 0.9, -0.4]);
        for degree in 1..=3 {
            let mut c = vec![0.0; coeff_count(degree)];
            c[..3].copy_from_slice(&[0.3, -0.1, 1.2]);
            assert_eq!(
                eval_sh(&c, dir, degree).unwrap(),
                eval_sh(&c[..3], dir, 0).unwrap()
            );
        }
    }

    /// Fibonacci-sphere quadrature of ∫ Y_i Y_j = δ_ij checks every constant.
    #[test]
    fn basis_is_orthonormal() {
        let n = 20_000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut gram = [[0.0f64; 16]; 16];
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let d = [(r * phi.cos()) as f32, (r * phi.sin()) as f32, z as f32];
            let b = basis(3, d);
            for a in 0..16 {
                for c in 0..16 {
                    gram[a][c] += b[a] as f64 * b[c] as f64;
                }
            }
        }
        let w = 4.0 * std::f64::consts::PI / n as f64;
        for a in 0..16 {
            for c in 0..16 {
                let expect = if a == c { 1.0 } else { 0.0 };
                assert!((gram[a][c] * w - expect).abs() < 2e-3, "({a},{c}) = {}", gram[a][c] * w);
            }
        }
    }
}
