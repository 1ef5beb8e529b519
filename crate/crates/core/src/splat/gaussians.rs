use serde::{Deserialize, Serialize};

use super::linalg::{sigmoid, Vec3};
use super::sh;
use crate::error::{Error, Result};

/// Length of the per-Gaussian identity feature.
pub const ID_FEATURE_DIM: usize = 16;

pub type IdFeature = [f32; ID_FEATURE_DIM];

/// All learnable per-Gaussian parameters, one array per attribute.
///
/// SH coefficients are stored basis-major: entry `b * 3 + c` of a Gaussian's
/// block is the coefficient of basis function `b` for color channel `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet {
    pub sh_degree: usize,
    pub positions: Vec<Vec3>,
    /// Quaternions `(w, x, y, z)`; normalized on use and after optimizer steps.
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f32>,
    pub sh_coeffs: Vec<f32>,
    pub id_features: Vec<IdFeature>,
}

impl GaussianSet {
    pub fn with_capacity(sh_degree: usize, n: usize) -> Self {
        GaussianSet {
            sh_degree,
            positions: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            sh_coeffs: Vec::with_capacity(n * sh::coeff_count(sh_degree)),
            id_features: Vec::with_capacity(n),
        }
    }

    pub fn new(sh_degree: usize) -> Self {
        Self::with_capacity(sh_degree, 0)
    }

    /// Appends one Gaussian. `sh` must hold `coeffs_per_gaussian()` values.
    pub fn push(
        &mut self,
        position: Vec3,
        rotation: [f32; 4],
        log_scale: Vec3,
        opacity_logit: f32,
        sh: &[f32],
        id_feature: IdFeature,
    ) {
        assert_eq!(sh.len(), self.coeffs_per_gaussian());
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.sh_coeffs.extend_from_slice(sh);
        self.id_features.push(id_feature);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn coeffs_per_gaussian(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }

    pub fn sh(&self, i: usize) -> &[f32] {
        let k = self.coeffs_per_gaussian();
        &self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [f32] {
        let k = self.coeffs_per_gaussian();
        &mut self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn opacity(&self, i: usize) -> f32 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scales[i].map(f32::exp)
    }

    /// Rescales quaternions to unit length. Ones already within f32 rounding
    /// of unit length are left untouched, so a zero optimizer step is exact.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
            if n > 0.0 && (n - 1.0).abs() > 2.0 * f32::EPSILON {
                for v in q.iter_mut() {
                    *v /= n;
                }
            }
        }
    }

    /// Copy of the Gaussians at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::with_capacity(self.sh_degree, indices.len());
        for &i in indices {
            out.push(
                self.positions[i],
                self.rotations[i],
                self.log_scales[i],
                self.opacity_logits[i],
                self.sh(i),
                self.id_features[i],
            );
        }
        out
    }

    /// Copy without the Gaussians at `indices`.
    pub fn without(&self, indices: &[usize]) -> GaussianSet {
        let mut drop = vec![false; self.len()];
        for &i in indices {
            drop[i] = true;
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !drop[i]).collect();
        self.subset(&keep)
    }

    /// Radius of the bounding sphere of all positions around their centroid.
    pub fn extent(&self) -> f32 {
        if self.is_empty() {
            return 0.0;
        }
        let n = self.len() as f64;
        let mut c = [0.0f64; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k] as f64 / n;
            }
        }
        self.positions
            .iter()
            .map(|p| {
                let d: f64 = (0..3).map(|k| (p[k] as f64 - c[k]).powi(2)).sum();
                d.sqrt()
            })
            .fold(0.0f64, f64::max) as f32
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::invalid(format!(
                "SH degree {} exceeds {}",
                self.sh_degree,
                sh::MAX_DEGREE
            )));
        }
        let lens = [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("id_features", self.id_features.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::invalid(format!(
                    "{name} has {len} entries, positions has {n}"
                )));
            }
        }
        if self.sh_coeffs.len() != n * self.coeffs_per_gaussian() {
            return Err(Error::invalid(format!(
                "sh_coeffs has {} values, expected {}",
                self.sh_coeffs.len(),
                n * self.coeffs_per_gaussian()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> GaussianSet {
        let mut g = GaussianSet::new(1);
        let sh = vec![0.0; 12];
        g.push([0.0; 3], [2.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, &sh, [0.0; 16]);
        g.push([1.0, 0.0, 0.0], [0.0, 0.0, 3.0, 4.0], [0.0; 3], 1.0, &sh, [1.0; 16]);
        g
    }

    #[test]
    fn rotations_normalize_to_unit() {
        let mut g = two();
        g.normalize_rotations();
        for q in &g.rotations {
            let n: f32 = q.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_eq!(g.rotations[1], [0.0, 0.0, 0.6, 0.8]);
    }

    #[test]
    fn subset_and_without_are_complementary() {
        let g = two();
        assert_eq!(g.subset(&[1]), g.without(&[0]));
        assert_eq!(g.without(&[]), g);
        g.validate().unwrap();
    }

    #[test]
    fn validate_catches_length_mismatch() {
        let mut g = two();
        g.opacity_logits.pop();
        assert!(g.validate().is_err());
    }
}
