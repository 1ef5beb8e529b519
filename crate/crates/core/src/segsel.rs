//! Selecting the Gaussians of an object by classifier probability, then
//! pruning spatial outliers.

use serde::{Deserialize, Serialize};

use crate::classifier::{softmax_in_place, Classifier};
use crate::error::{Error, Result};
use crate::knn;
use crate::splat::linalg::Vec3;
use crate::splat::GaussianSet;

pub const DEFAULT_THRESHOLD: f32 = 0.6;
pub const DEFAULT_OUTLIER_K: usize = 20;
pub const DEFAULT_STD_FACTOR: f32 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectParams {
    pub threshold: f32,
    pub outlier_k: usize,
    pub std_factor: f32,
}

impl Default for SelectParams {
    fn default() -> Self {
        SelectParams {
            threshold: DEFAULT_THRESHOLD,
            outlier_k: DEFAULT_OUTLIER_K,
            std_factor: DEFAULT_STD_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub removed: usize,
    /// Set when the input was too small to evaluate and was returned unchanged.
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    /// Gaussians dropped for falling below the probability threshold.
    pub filtered_by_threshold: usize,
    pub removed_as_outliers: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSelection {
    pub object_ids: Vec<u16>,
    /// Sorted, unique Gaussian indices.
    pub indices: Vec<usize>,
    /// Per Gaussian, the largest probability over the requested IDs.
    pub probabilities: Vec<f32>,
    pub report: RemovalReport,
    /// True when nothing was selected.
    pub empty: bool,
}

impl ObjectSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Softmax of the classifier logits of every raw identity feature, `N × C`.
pub fn classify_gaussians(gaussians: &GaussianSet, classifier: &Classifier) -> Vec<Vec<f32>> {
    gaussians
        .id_features
        .iter()
        .map(|f| {
            let mut l = classifier.logits(f);
            softmax_in_place(&mut l);
            l
        })
        .collect()
}

fn requested_probabilities(gaussians: &GaussianSet, classifier: &Classifier, object_ids: &[u16]) -> Result<Vec<f32>> {
    if object_ids.is_empty() {
        return Err(Error::invalid("no object IDs requested"));
    }
    if let Some(&bad) = object_ids.iter().find(|&&id| id as usize >= classifier.num_classes) {
        return Err(Error::invalid(format!(
            "unknown object ID {bad}; the classifier knows IDs 0 to {}",
            classifier.num_classes.saturating_sub(1)
        )));
    }
    Ok(classify_gaussians(gaussians, classifier)
        .iter()
        .map(|p| object_ids.iter().map(|&id| p[id as usize]).fold(0.0, f32::max))
        .collect())
}

/// Indices whose probability for any requested ID reaches `threshold`,
/// before outlier removal.
pub fn threshold_candidates(
    gaussians: &GaussianSet,
    classifier: &Classifier,
    object_ids: &[u16],
    threshold: f32,
) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    let p = requested_probabilities(gaussians, classifier, object_ids)?;
    Ok((0..p.len()).filter(|&i| p[i] >= threshold).collect())
}

fn check_threshold(threshold: f32) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    Ok(())
}

pub fn select_object(
    gaussians: &GaussianSet,
    classifier: &Classifier,
    object_ids: &[u16],
    threshold: f32,
) -> Result<ObjectSelection> {
    select_object_with(
        gaussians,
        classifier,
        object_ids,
        &SelectParams {
            threshold,
            ..SelectParams::default()
        },
    )
}

pub fn select_object_with(
    gaussians: &GaussianSet,
    classifier: &Classifier,
    object_ids: &[u16],
    params: &SelectParams,
) -> Result<ObjectSelection> {
    check_threshold(params.threshold)?;
    let probabilities = requested_probabilities(gaussians, classifier, object_ids)?;
    let candidates: Vec<usize> = (0..probabilities.len())
        .filter(|&i| probabilities[i] >= params.threshold)
        .collect();
    let points: Vec<Vec3> = candidates.iter().map(|&i| gaussians.positions[i]).collect();
    let (kept, outliers) = remove_outliers(&points, params.outlier_k, params.std_factor);
    let indices: Vec<usize> = kept.iter().map(|&k| candidates[k]).collect();
    let mut ids = object_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let empty = indices.is_empty();
    if empty {
        log::warn!("selection for IDs {ids:?} is empty at threshold {}", params.threshold);
    }
    Ok(ObjectSelection {
        object_ids: ids,
        indices,
        probabilities,
        report: RemovalReport {
            filtered_by_threshold: gaussians.len() - candidates.len(),
            removed_as_outliers: outliers.removed,
            note: outliers.note,
        },
        empty,
    })
}

/// Statistical outlier removal: drop points whose mean distance to their `k`
/// nearest neighbors exceeds `μ + std_factor·σ` of those means. Returns the
/// retained positions into `points`, ascending.
pub fn remove_outliers(points: &[Vec3], k: usize, std_factor: f32) -> (Vec<usize>, OutlierReport) {
    if points.len() <= k || k == 0 {
        return (
            (0..points.len()).collect(),
            OutlierReport {
                removed: 0,
                note: Some(format!(
                    "{} points is not more than k={k}; outlier removal skipped",
                    points.len()
                )),
            },
        );
    }
    let means = knn::mean_neighbor_distances(points, k);
    // summing in sorted order makes the statistics independent of input order
    let mut sorted: Vec<f64> = means.iter().map(|&m| m as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mu = sorted.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = sorted.iter().map(|m| (m - mu) * (m - mu)).collect();
    dev.sort_by(f64::total_cmp);
    let sigma = (dev.iter().sum::<f64>() / n).sqrt();
    let limit = mu + std_factor as f64 * sigma;
    let kept: Vec<usize> = (0..points.len()).filter(|&i| means[i] as f64 <= limit).collect();
    let removed = points.len() - kept.len();
    (kept, OutlierReport { removed, note: None })
}
