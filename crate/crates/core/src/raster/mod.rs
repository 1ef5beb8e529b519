//! Tile-based forward and backward rasterization.
//!
//! Every render goes through [`PreparedView`]: Gaussians are projected,
//! culled, depth-sorted and binned into screen tiles once per camera. The
//! compositor then blends an arbitrary per-Gaussian payload (rgb, identity
//! features, one-hot labels) front to back with the same weights
//! `w_i = α_i Π_{j<i} (1 - α_j)`, so color and feature images always agree
//! on coverage.

mod backward;
mod composite;
mod prepare;

use std::sync::Arc;

pub use backward::{BackwardOptions, CompositeGrads, GaussianGrads};
pub use composite::Composite;
pub use prepare::{sort_and_cull, PreparedView, RasterDiagnostics, Splat};

use crate::classifier::Classifier;
use crate::splat::linalg::{normalize3, sub3, Vec3};
use crate::splat::{sh, Camera, GaussianSet, DEFAULT_NEAR_PLANE, ID_FEATURE_DIM};

pub const ALPHA_MAX: f32 = 0.99;
pub const ALPHA_SKIP: f32 = 1.0 / 255.0;
pub const T_STOP: f32 = 1e-4;
pub const TILE_SIZE: u32 = 16;
/// Pixels whose transmittance exceeds this are labeled background.
pub const BACKGROUND_TRANSMITTANCE: f32 = 0.5;
pub const BACKGROUND_ID: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tiling {
    Tiles(u32),
    /// Every pixel walks the full sorted list.
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub alpha_max: f32,
    pub alpha_skip: f32,
    pub t_stop: f32,
    pub near_plane: f32,
    pub tiling: Tiling,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            alpha_max: ALPHA_MAX,
            alpha_skip: ALPHA_SKIP,
            t_stop: T_STOP,
            near_plane: DEFAULT_NEAR_PLANE,
            tiling: Tiling::Tiles(TILE_SIZE),
        }
    }
}

/// Color render plus the state its backward pass needs.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// `H×W×3`, row-major.
    pub color: Vec<f32>,
    pub final_transmittance: Vec<f32>,
    pub per_pixel_contributor_count: Vec<u32>,
    /// Visible Gaussian indices, front to back.
    pub sorted_order: Vec<u32>,
    pub diagnostics: RasterDiagnostics,
    view: Arc<PreparedView>,
    composite: Composite,
    /// Clamped SH color per sorted splat.
    splat_colors: Vec<f32>,
}

impl RenderOutput {
    pub fn view(&self) -> &Arc<PreparedView> {
        &self.view
    }

    pub fn weight_sum(&self) -> &[f32] {
        &self.composite.weight_sum
    }
}

#[derive(Debug, Clone)]
pub struct FeatureRenderOutput {
    pub width: u32,
    pub height: u32,
    /// `H×W×16`, row-major.
    pub features: Vec<f32>,
    pub final_transmittance: Vec<f32>,
    view: Arc<PreparedView>,
    composite: Composite,
}

impl FeatureRenderOutput {
    pub fn view(&self) -> &Arc<PreparedView> {
        &self.view
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.features[index * ID_FEATURE_DIM..(index + 1) * ID_FEATURE_DIM]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Rasterizer {
    pub config: RasterConfig,
}

impl Rasterizer {
    pub fn new(config: RasterConfig) -> Self {
        Rasterizer { config }
    }

    pub fn prepare(&self, gaussians: &GaussianSet, camera: &Camera) -> Arc<PreparedView> {
        Arc::new(PreparedView::new(gaussians, camera, &self.config))
    }

    pub fn render_color(&self, gaussians: &GaussianSet, camera: &Camera, background: Vec3) -> RenderOutput {
        let view = self.prepare(gaussians, camera);
        self.render_color_prepared(&view, gaussians, camera, background)
    }

    pub fn render_color_prepared(
        &self,
        view: &Arc<PreparedView>,
        gaussians: &GaussianSet,
        camera: &Camera,
        background: Vec3,
    ) -> RenderOutput {
        let splat_colors = splat_colors(view, gaussians, camera);
        let composite = view.composite(&splat_colors, 3, &background);
        RenderOutput {
            width: view.width,
            height: view.height,
            color: composite.values.clone(),
            final_transmittance: composite.final_transmittance.clone(),
            per_pixel_contributor_count: composite.contributors.clone(),
            sorted_order: view.splats.iter().map(|s| s.index).collect(),
            diagnostics: view.diagnostics,
            view: Arc::clone(view),
            composite,
            splat_colors,
        }
    }

    pub fn render_features(&self, gaussians: &GaussianSet, camera: &Camera) -> FeatureRenderOutput {
        let view = self.prepare(gaussians, camera);
        self.render_features_prepared(&view, gaussians)
    }

    pub fn render_features_prepared(
        &self,
        view: &Arc<PreparedView>,
        gaussians: &GaussianSet,
    ) -> FeatureRenderOutput {
        let payload = gather_features(view, gaussians);
        let composite = view.composite(&payload, ID_FEATURE_DIM, &[0.0; ID_FEATURE_DIM]);
        FeatureRenderOutput {
            width: view.width,
            height: view.height,
            features: composite.values.clone(),
            final_transmittance: composite.final_transmittance.clone(),
            view: Arc::clone(view),
            composite,
        }
    }

    /// Gradients of `⟨upstream, color⟩`.
    pub fn render_color_backward(
        &self,
        gaussians: &GaussianSet,
        camera: &Camera,
        forward: &RenderOutput,
        upstream: &[f32],
        options: &BackwardOptions,
    ) -> GaussianGrads {
        assert_eq!(upstream.len(), forward.color.len());
        let view = &forward.view;
        let cg = view.composite_backward(&forward.splat_colors, 3, &forward.composite, upstream, options.geometry);
        let mut grads = GaussianGrads::zeros_like(gaussians);
        if options.sh {
            backward::chain_sh(view, gaussians, camera, &cg, &mut grads, options.geometry);
        }
        if options.geometry {
            backward::chain_geometry(view, gaussians, camera, &cg, &mut grads);
        }
        grads
    }

    /// Gradients of `⟨upstream, features⟩`. Geometry gradients only when `geometry` is set.
    pub fn render_features_backward(
        &self,
        gaussians: &GaussianSet,
        camera: &Camera,
        forward: &FeatureRenderOutput,
        upstream: &[f32],
        geometry: bool,
    ) -> GaussianGrads {
        assert_eq!(upstream.len(), forward.features.len());
        let view = &forward.view;
        let payload = gather_features(view, gaussians);
        let cg = view.composite_backward(&payload, ID_FEATURE_DIM, &forward.composite, upstream, geometry);
        let mut grads = GaussianGrads::zeros_like(gaussians);
        for (pos, s) in view.splats.iter().enumerate() {
            let dst = &mut grads.id_features[s.index as usize];
            for (d, g) in dst.iter_mut().zip(&cg.payload[pos * ID_FEATURE_DIM..(pos + 1) * ID_FEATURE_DIM]) {
                *d += g;
            }
        }
        if geometry {
            backward::chain_geometry(view, gaussians, camera, &cg, &mut grads);
        }
        grads
    }

    /// Per-pixel class from the rendered identity features; background where
    /// transmittance exceeds one half.
    pub fn render_id_map(&self, gaussians: &GaussianSet, camera: &Camera, classifier: &Classifier) -> Vec<u16> {
        let f = self.render_features(gaussians, camera);
        id_map_from_features(&f, classifier)
    }
}

pub fn id_map_from_features(f: &FeatureRenderOutput, classifier: &Classifier) -> Vec<u16> {
    let mut logits = vec![0.0; classifier.num_classes];
    (0..f.final_transmittance.len())
        .map(|p| {
            if f.final_transmittance[p] > BACKGROUND_TRANSMITTANCE || classifier.num_classes == 0 {
                BACKGROUND_ID
            } else {
                classifier.logits_into(f.pixel(p), &mut logits);
                crate::classifier::argmax(&logits) as u16
            }
        })
        .collect()
}

/// Unit view direction from the camera center to `position`, and the distance.
pub(crate) fn view_direction(camera_center: Vec3, position: Vec3) -> (Vec3, f32) {
    let v = sub3(position, camera_center);
    let n = crate::splat::linalg::norm3(v);
    (normalize3(v), n)
}

fn splat_colors(view: &PreparedView, gaussians: &GaussianSet, camera: &Camera) -> Vec<f32> {
    let center = camera.center();
    let degree = gaussians.sh_degree;
    let mut out = Vec::with_capacity(view.splats.len() * 3);
    for s in &view.splats {
        let i = s.index as usize;
        let (dir, _) = view_direction(center, gaussians.positions[i]);
        let b = sh::basis(degree, dir);
        let rgb = sh::eval_unclamped(gaussians.sh(i), degree, &b);
        out.extend(rgb.map(|v| v.max(0.0)));
    }
    out
}

fn gather_features(view: &PreparedView, gaussians: &GaussianSet) -> Vec<f32> {
    let mut out = Vec::with_capacity(view.splats.len() * ID_FEATURE_DIM);
    for s in &view.splats {
        out.extend_from_slice(&gaussians.id_features[s.index as usize]);
    }
    out
}

pub fn render_color(gaussians: &GaussianSet, camera: &Camera, background: Vec3) -> RenderOutput {
    Rasterizer::default().render_color(gaussians, camera, background)
}

pub fn render_color_backward(
    gaussians: &GaussianSet,
    camera: &Camera,
    forward: &RenderOutput,
    upstream: &[f32],
) -> GaussianGrads {
    Rasterizer::default().render_color_backward(gaussians, camera, forward, upstream, &BackwardOptions::default())
}

pub fn render_features(gaussians: &GaussianSet, camera: &Camera) -> FeatureRenderOutput {
    Rasterizer::default().render_features(gaussians, camera)
}

pub fn render_features_backward(
    gaussians: &GaussianSet,
    camera: &Camera,
    forward: &FeatureRenderOutput,
    upstream: &[f32],
) -> GaussianGrads {
    Rasterizer::default().render_features_backward(gaussians, camera, forward, upstream, false)
}

pub fn render_id_map(gaussians: &GaussianSet, camera: &Camera, classifier: &Classifier) -> Vec<u16> {
    Rasterizer::default().render_id_map(gaussians, camera, classifier)
}
