use rand::seq::index;
use rand::Rng;

use crate::classifier::{log_softmax, Classifier, ClassifierGrads};
use crate::error::{Error, Result};
use crate::knn;
use crate::splat::{GaussianSet, IdFeature, ID_FEATURE_DIM};

/// Mask value excluded from the cross-entropy.
pub const IGNORE_LABEL: u16 = u16::MAX;

/// Mean absolute error and its gradient `sign(r - t) / len`.
pub fn photometric_loss(render: &[f32], target: &[f32]) -> Result<(f32, Vec<f32>)> {
    if render.len() != target.len() {
        return Err(Error::invalid(format!(
            "render has {} values, target {}",
            render.len(),
            target.len()
        )));
    }
    let n = render.len().max(1) as f32;
    let mut sum = 0.0f64;
    let grad = render
        .iter()
        .zip(target)
        .map(|(r, t)| {
            let d = r - t;
            sum += d.abs() as f64;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(((sum / n as f64) as f32, grad))
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f32,
    /// Per pixel, `H×W×16`.
    pub grad_features: Vec<f32>,
    pub grad_classifier: ClassifierGrads,
    pub counted_pixels: usize,
}

/// Softmax cross-entropy between classified rendered features and mask
/// labels, averaged over pixels whose label is not [`IGNORE_LABEL`].
pub fn id_cross_entropy(features: &[f32], classifier: &Classifier, mask: &[u16]) -> Result<CrossEntropy> {
    if features.len() != mask.len() * ID_FEATURE_DIM {
        return Err(Error::invalid(format!(
            "{} feature values for a mask of {} pixels",
            features.len(),
            mask.len()
        )));
    }
    let c = classifier.num_classes;
    if let Some(&bad) = mask.iter().find(|&&m| m != IGNORE_LABEL && m as usize >= c) {
        return Err(Error::invalid(format!("mask label {bad} outside {c} classes")));
    }
    let counted = mask.iter().filter(|&&m| m != IGNORE_LABEL).count();
    let mut out = CrossEntropy {
        loss: 0.0,
        grad_features: vec![0.0; features.len()],
        grad_classifier: ClassifierGrads::zeros_like(classifier),
        counted_pixels: counted,
    };
    if counted == 0 {
        return Ok(out);
    }
    let inv = 1.0 / counted as f32;
    let mut logits = vec![0.0f32; c];
    let mut total = 0.0f64;
    for (p, &label) in mask.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let f = &features[p * ID_FEATURE_DIM..(p + 1) * ID_FEATURE_DIM];
        classifier.logits_into(f, &mut logits);
        let ls = log_softmax(&logits);
        total -= ls[label as usize] as f64;
        let grad_logits: Vec<f32> = ls
            .iter()
            .enumerate()
            .map(|(k, l)| (l.exp() - if k == label as usize { 1.0 } else { 0.0 }) * inv)
            .collect();
        classifier.backward_into(
            f,
            &grad_logits,
            &mut out.grad_features[p * ID_FEATURE_DIM..(p + 1) * ID_FEATURE_DIM],
            &mut out.grad_classifier,
        );
    }
    out.loss = (total / counted as f64) as f32;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SpatialLoss {
    pub loss: f32,
    pub grad_features: Vec<IdFeature>,
    pub grad_classifier: ClassifierGrads,
}

/// Distinct Gaussian indices to anchor the spatial loss; all of them when
/// fewer than `sample_size` exist.
pub fn sample_anchors<R: Rng>(n: usize, sample_size: usize, rng: &mut R) -> Vec<usize> {
    if sample_size >= n {
        return (0..n).collect();
    }
    let mut v = index::sample(rng, n, sample_size).into_vec();
    v.sort_unstable();
    v
}

/// Mean over anchors and their `k` nearest Gaussians (by position) of
/// `KL(p_anchor ‖ p_neighbor)`, where `p` is the classifier softmax of the
/// raw identity feature.
pub fn spatial_consistency_loss(
    gaussians: &GaussianSet,
    classifier: &Classifier,
    anchors: &[usize],
    k: usize,
) -> Result<SpatialLoss> {
    let n = gaussians.len();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!("spatial loss needs more than k={k} Gaussians, have {n}")));
    }
    let c = classifier.num_classes;
    let neighbors = knn::k_nearest_many(&gaussians.positions, anchors, k);
    let mut log_probs: Vec<Option<Vec<f32>>> = vec![None; n];
    let mut lp = |i: usize| -> Vec<f32> {
        log_probs[i]
            .get_or_insert_with(|| log_softmax(&classifier.logits(&gaussians.id_features[i])))
            .clone()
    };
    let count = (anchors.len() * k) as f32;
    let mut grad_logits: Vec<Option<Vec<f32>>> = vec![None; n];
    let mut total = 0.0f64;
    for (&a, nn) in anchors.iter().zip(&neighbors) {
        let lpa = lp(a);
        let pa: Vec<f32> = lpa.iter().map(|v| v.exp()).collect();
        for &j in nn {
            let lqj = lp(j);
            let kl: f32 = (0..c).map(|m| pa[m] * (lpa[m] - lqj[m])).sum();
            total += kl as f64;
            let ga = grad_logits[a].get_or_insert_with(|| vec![0.0; c]);
            for m in 0..c {
                ga[m] += pa[m] * ((lpa[m] - lqj[m]) - kl) / count;
            }
            let gj = grad_logits[j].get_or_insert_with(|| vec![0.0; c]);
            for m in 0..c {
                gj[m] += (lqj[m].exp() - pa[m]) / count;
            }
        }
    }
    let mut out = SpatialLoss {
        loss: if anchors.is_empty() { 0.0 } else { (total / count as f64) as f32 },
        grad_features: vec![[0.0; ID_FEATURE_DIM]; n],
        grad_classifier: ClassifierGrads::zeros_like(classifier),
    };
    for (i, g) in grad_logits.iter().enumerate() {
        if let Some(g) = g {
            classifier.backward_into(&gaussians.id_features[i], g, &mut out.grad_features[i], &mut out.grad_classifier);
        }
    }
    Ok(out)
}
