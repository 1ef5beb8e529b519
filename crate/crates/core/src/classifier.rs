use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::splat::ID_FEATURE_DIM;

/// Linear map from identity features to object-class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub num_classes: usize,
    /// Row-major `num_classes × ID_FEATURE_DIM`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Classifier {
    pub fn zeros(num_classes: usize) -> Self {
        Classifier {
            num_classes,
            weights: vec![0.0; num_classes * ID_FEATURE_DIM],
            bias: vec![0.0; num_classes],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn seeded(num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (ID_FEATURE_DIM as f32).sqrt();
        let mut c = Self::zeros(num_classes);
        for w in c.weights.iter_mut().chain(c.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        c
    }

    pub fn logits_into(&self, feature: &[f32], out: &mut [f32]) {
        debug_assert_eq!(feature.len(), ID_FEATURE_DIM);
        for (o, out) in out.iter_mut().enumerate().take(self.num_classes) {
            let row = &self.weights[o * ID_FEATURE_DIM..(o + 1) * ID_FEATURE_DIM];
            *out = self.bias[o] + row.iter().zip(feature).map(|(w, f)| w * f).sum::<f32>();
        }
    }

    pub fn logits(&self, feature: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(feature, &mut out);
        out
    }

    pub fn probabilities(&self, feature: &[f32]) -> Vec<f32> {
        let mut l = self.logits(feature);
        softmax_in_place(&mut l);
        l
    }

    pub fn predict(&self, feature: &[f32]) -> usize {
        argmax(&self.logits(feature))
    }
}

/// Gradients for a [`Classifier`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ClassifierGrads {
    pub fn zeros_like(c: &Classifier) -> Self {
        ClassifierGrads {
            weights: vec![0.0; c.weights.len()],
            bias: vec![0.0; c.bias.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &ClassifierGrads, s: f32) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += s * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += s * b;
        }
    }
}

impl Classifier {
    /// Backpropagates `grad_logits` for one input: accumulates parameter
    /// gradients into `grads` and the input gradient into `grad_feature`.
    pub fn backward_into(&self, feature: &[f32], grad_logits: &[f32], grad_feature: &mut [f32], grads: &mut ClassifierGrads) {
        let d = feature.len();
        for (c, &g) in grad_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[c * d..(c + 1) * d];
            let grow = &mut grads.weights[c * d..(c + 1) * d];
            for k in 0..d {
                grad_feature[k] += g * row[k];
                grow[k] += g * feature[k];
            }
            grads.bias[c] += g;
        }
    }
}

pub fn softmax_in_place(v: &mut [f32]) {
    let m = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Log-softmax, numerically stable.
pub fn log_softmax(v: &[f32]) -> Vec<f32> {
    let m = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f32>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
