//! Photometric scene training with joint identity-feature segmentation.

mod adam;
mod losses;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamGroup, AdamState};
pub use losses::{
    id_cross_entropy, photometric_loss, sample_anchors, spatial_consistency_loss, CrossEntropy, SpatialLoss,
    IGNORE_LABEL,
};

use crate::classifier::{Classifier, ClassifierGrads};
use crate::error::{Error, Result};
use crate::raster::{BackwardOptions, GaussianGrads, Rasterizer};
use crate::rgb::RgbImage;
use crate::splat::{Camera, GaussianSet, ID_FEATURE_DIM};

/// One posed training image with an optional object-ID mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub name: String,
    pub camera: Camera,
    pub image: RgbImage,
    /// `H×W` object IDs; [`IGNORE_LABEL`] marks unsupervised pixels.
    pub mask: Option<Vec<u16>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub positions: f32,
    pub rotations: f32,
    pub log_scales: f32,
    pub opacity: f32,
    pub sh_dc: f32,
    pub sh_rest: f32,
    pub id_features: f32,
    pub classifier: f32,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            positions: 1.6e-4,
            rotations: 1e-3,
            log_scales: 5e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
            id_features: 2.5e-3,
            classifier: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    /// Weight of the mask cross-entropy.
    pub lambda_ce: f32,
    /// Weight of the 3D neighbor-consistency loss.
    pub lambda_3d: f32,
    pub knn_k: usize,
    pub sample_size: usize,
    pub seed: u64,
    /// Snapshot cadence in iterations; 0 disables snapshots.
    pub snapshot_every: usize,
    pub background: [f32; 3],
    /// Let the feature losses move geometry as well as identity features.
    pub feature_geometry_grads: bool,
    /// Drop Gaussians with opacity below `prune_threshold` every `prune_every` iterations.
    pub prune_opacity: bool,
    pub prune_threshold: f32,
    pub prune_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 30_000,
            lr: LearningRates::default(),
            lambda_ce: 1.0,
            lambda_3d: 1.0,
            knn_k: 16,
            sample_size: 1000,
            seed: 0,
            snapshot_every: 0,
            background: [0.0; 3],
            feature_geometry_grads: false,
            prune_opacity: false,
            prune_threshold: 0.005,
            prune_every: 1000,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if !(self.lambda_ce >= 0.0 && self.lambda_3d >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be at least 1"));
        }
        if self.prune_opacity && self.prune_every == 0 {
            return Err(Error::invalid("prune_every must be positive"));
        }
        let lr = &self.lr;
        let all = [
            lr.positions,
            lr.rotations,
            lr.log_scales,
            lr.opacity,
            lr.sh_dc,
            lr.sh_rest,
            lr.id_features,
            lr.classifier,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON form, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        fnv1a(text.as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub view: usize,
    pub photometric: f32,
    pub cross_entropy: f32,
    pub spatial: f32,
    pub total: f32,
    pub gaussians: usize,
    pub wall_seconds: f64,
}

const GROUPS: [&str; 9] = [
    "positions",
    "rotations",
    "log_scales",
    "opacity",
    "sh_dc",
    "sh_rest",
    "id_features",
    "classifier_weights",
    "classifier_bias",
];

/// Number of classes implied by the masks: one more than the largest ID.
pub fn num_classes_from_views(views: &[TrainingView]) -> usize {
    views
        .iter()
        .filter_map(|v| v.mask.as_ref())
        .flat_map(|m| m.iter().copied().filter(|&id| id != IGNORE_LABEL))
        .max()
        .map_or(1, |m| m as usize + 1)
}

pub struct Trainer<'a> {
    views: &'a [TrainingView],
    config: TrainConfig,
    gaussians: GaussianSet,
    classifier: Classifier,
    adam: AdamState,
    rasterizer: Rasterizer,
    order: Vec<usize>,
    order_rng: ChaCha8Rng,
    anchor_rng: ChaCha8Rng,
    iteration: usize,
    has_masks: bool,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(views: &'a [TrainingView], gaussians: GaussianSet, classifier: Classifier, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::invalid("training needs at least one view"));
        }
        gaussians.validate()?;
        for v in views {
            if v.image.width != v.camera.width || v.image.height != v.camera.height {
                return Err(Error::Data(format!(
                    "{}: image {}×{} vs camera {}×{}",
                    v.name, v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
            if let Some(m) = &v.mask {
                if m.len() != v.image.pixel_count() {
                    return Err(Error::Data(format!("{}: mask size does not match image", v.name)));
                }
            }
        }
        let has_masks = views.iter().any(|v| v.mask.is_some());
        let needed = num_classes_from_views(views);
        if classifier.num_classes < needed {
            return Err(Error::invalid(format!(
                "classifier has {} classes but masks use {}",
                classifier.num_classes, needed
            )));
        }
        let adam = Self::fresh_adam(&config, &gaussians, &classifier);
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
        order_rng.set_stream(0);
        let mut anchor_rng = ChaCha8Rng::seed_from_u64(config.seed);
        anchor_rng.set_stream(1);
        Ok(Trainer {
            views,
            order: (0..views.len()).collect(),
            config,
            gaussians,
            classifier,
            adam,
            rasterizer: Rasterizer::default(),
            order_rng,
            anchor_rng,
            iteration: 0,
            has_masks,
            started: Instant::now(),
        })
    }

    fn fresh_adam(config: &TrainConfig, g: &GaussianSet, c: &Classifier) -> AdamState {
        let n = g.len();
        let k = g.coeffs_per_gaussian();
        let lr = &config.lr;
        AdamState::new(
            config.adam,
            &[
                (GROUPS[0], lr.positions, n * 3),
                (GROUPS[1], lr.rotations, n * 4),
                (GROUPS[2], lr.log_scales, n * 3),
                (GROUPS[3], lr.opacity, n),
                (GROUPS[4], lr.sh_dc, n * 3),
                (GROUPS[5], lr.sh_rest, n * (k - 3)),
                (GROUPS[6], lr.id_features, n * ID_FEATURE_DIM),
                (GROUPS[7], lr.classifier, c.weights.len()),
                (GROUPS[8], lr.classifier, c.bias.len()),
            ],
        )
    }

    pub fn gaussians(&self) -> &GaussianSet {
        &self.gaussians
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn into_parts(self) -> (GaussianSet, Classifier) {
        (self.gaussians, self.classifier)
    }

    /// Runs one optimization step.
    pub fn step(&mut self) -> Result<IterationLog> {
        let n_views = self.views.len();
        if self.iteration.is_multiple_of(n_views) {
            self.order.shuffle(&mut self.order_rng);
        }
        let view_index = self.order[self.iteration % n_views];
        let view = &self.views[view_index];
        let cfg = &self.config;
        let g = &self.gaussians;

        let prepared = self.rasterizer.prepare(g, &view.camera);
        let render = self.rasterizer.render_color_prepared(&prepared, g, &view.camera, cfg.background);
        let (photo, upstream) = photometric_loss(&render.color, &view.image.data)?;
        let mut grads = self
            .rasterizer
            .render_color_backward(g, &view.camera, &render, &upstream, &BackwardOptions::default());
        let mut cls_grads = ClassifierGrads::zeros_like(&self.classifier);

        let mut ce_loss = 0.0;
        if let (Some(mask), true) = (&view.mask, cfg.lambda_ce > 0.0) {
            let feats = self.rasterizer.render_features_prepared(&prepared, g);
            let ce = id_cross_entropy(&feats.features, &self.classifier, mask)?;
            ce_loss = ce.loss;
            if ce.counted_pixels > 0 {
                let mut up = ce.grad_features;
                up.iter_mut().for_each(|v| *v *= cfg.lambda_ce);
                let fg = self
                    .rasterizer
                    .render_features_backward(g, &view.camera, &feats, &up, cfg.feature_geometry_grads);
                grads.add_assign(&fg);
                cls_grads.add_scaled(&ce.grad_classifier, cfg.lambda_ce);
            }
        }

        let mut spatial = 0.0;
        if self.has_masks && cfg.lambda_3d > 0.0 && g.len() > cfg.knn_k {
            let anchors = sample_anchors(g.len(), cfg.sample_size, &mut self.anchor_rng);
            let s = spatial_consistency_loss(g, &self.classifier, &anchors, cfg.knn_k)?;
            spatial = s.loss;
            for (d, v) in grads.id_features.iter_mut().zip(&s.grad_features) {
                for (a, b) in d.iter_mut().zip(v) {
                    *a += cfg.lambda_3d * b;
                }
            }
            cls_grads.add_scaled(&s.grad_classifier, cfg.lambda_3d);
        }

        let total = photo + cfg.lambda_ce * ce_loss + cfg.lambda_3d * spatial;
        if !total.is_finite() {
            return Err(Error::Divergence {
                iteration: self.iteration,
                message: format!("loss is {total} (photometric {photo}, cross-entropy {ce_loss}, spatial {spatial})"),
            });
        }

        self.apply(&grads, &cls_grads).map_err(|e| match e {
            Error::NonFiniteGradient { group } => Error::Divergence {
                iteration: self.iteration,
                message: format!("non-finite gradient in `{group}`"),
            },
            other => other,
        })?;
        self.iteration += 1;

        if self.config.prune_opacity && self.iteration.is_multiple_of(self.config.prune_every) {
            self.prune();
        }

        Ok(IterationLog {
            iteration: self.iteration,
            view: view_index,
            photometric: photo,
            cross_entropy: ce_loss,
            spatial,
            total,
            gaussians: self.gaussians.len(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        })
    }

    fn apply(&mut self, grads: &GaussianGrads, cls: &ClassifierGrads) -> Result<()> {
        let k = self.gaussians.coeffs_per_gaussian();
        let (mut dc, mut rest) = split_sh(&self.gaussians.sh_coeffs, k);
        let (gdc, grest) = split_sh(&grads.sh_coeffs, k);
        let g = &mut self.gaussians;
        let mut opacity = std::mem::take(&mut g.opacity_logits);
        let result = self.adam.apply(
            &mut [
                g.positions.as_flattened_mut(),
                g.rotations.as_flattened_mut(),
                g.log_scales.as_flattened_mut(),
                &mut opacity,
                &mut dc,
                &mut rest,
                g.id_features.as_flattened_mut(),
                &mut self.classifier.weights,
                &mut self.classifier.bias,
            ],
            &[
                grads.positions.as_flattened(),
                grads.rotations.as_flattened(),
                grads.log_scales.as_flattened(),
                &grads.opacity_logits,
                &gdc,
                &grest,
                grads.id_features.as_flattened(),
                &cls.weights,
                &cls.bias,
            ],
        );
        g.opacity_logits = opacity;
        result?;
        merge_sh(&mut g.sh_coeffs, &dc, &rest, k);
        g.normalize_rotations();
        Ok(())
    }

    fn prune(&mut self) {
        let keep: Vec<usize> = (0..self.gaussians.len())
            .filter(|&i| self.gaussians.opacity(i) >= self.config.prune_threshold)
            .collect();
        if keep.len() == self.gaussians.len() || keep.is_empty() {
            return;
        }
        let k = self.gaussians.coeffs_per_gaussian();
        let strides = [3, 4, 3, 1, 3, k - 3, ID_FEATURE_DIM];
        for (name, stride) in GROUPS.iter().zip(strides) {
            self.adam.retain(name, &keep, stride);
        }
        log::info!(
            "pruned {} low-opacity Gaussians at iteration {}",
            self.gaussians.len() - keep.len(),
            self.iteration
        );
        self.gaussians = self.gaussians.subset(&keep);
    }
}

/// Splits basis-major SH blocks into DC (first 3 values) and the rest.
fn split_sh(sh: &[f32], k: usize) -> (Vec<f32>, Vec<f32>) {
    let n = sh.len() / k;
    let mut dc = Vec::with_capacity(n * 3);
    let mut rest = Vec::with_capacity(n * (k - 3));
    for block in sh.chunks_exact(k) {
        dc.extend_from_slice(&block[..3]);
        rest.extend_from_slice(&block[3..]);
    }
    (dc, rest)
}

fn merge_sh(sh: &mut [f32], dc: &[f32], rest: &[f32], k: usize) {
    for (i, block) in sh.chunks_exact_mut(k).enumerate() {
        block[..3].copy_from_slice(&dc[i * 3..i * 3 + 3]);
        block[3..].copy_from_slice(&rest[i * (k - 3)..(i + 1) * (k - 3)]);
    }
}

pub struct TrainOutput {
    pub gaussians: GaussianSet,
    pub classifier: Classifier,
    pub log: Vec<IterationLog>,
}

/// Trains for `config.iterations` steps. Each iteration's record is written
/// as one JSON line to `log_sink`; `snapshot` is called every
/// `config.snapshot_every` iterations.
pub fn train(
    views: &[TrainingView],
    gaussians: GaussianSet,
    classifier: Classifier,
    config: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
    mut snapshot: impl FnMut(usize, &GaussianSet, &Classifier) -> Result<()>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(views, gaussians, classifier, config.clone())?;
    let mut log = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let rec = trainer.step()?;
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&rec).expect("log record serializes");
            writeln!(sink, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        if rec.iteration % 500 == 0 {
            log::info!(
                "iter {} photo {:.5} ce {:.5} spatial {:.5}",
                rec.iteration,
                rec.photometric,
                rec.cross_entropy,
                rec.spatial
            );
        }
        if config.snapshot_every > 0 && rec.iteration % config.snapshot_every == 0 {
            snapshot(rec.iteration, trainer.gaussians(), trainer.classifier())?;
        }
        log.push(rec);
    }
    let (gaussians, classifier) = trainer.into_parts();
    Ok(TrainOutput {
        gaussians,
        classifier,
        log,
    })
}
