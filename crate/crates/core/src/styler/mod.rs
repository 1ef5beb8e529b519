//! Localized style transfer: optimize only the SH coefficients of selected
//! Gaussians so renders match a style image under the NNFM loss.

mod nnfm;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use nnfm::{nnfm_loss, NnfmLoss, NnfmVariant};

use crate::error::{Error, Result};
use crate::featnet::{FeatureExtractor, FeatureStack, DEFAULT_LAYERS};
use crate::raster::{BackwardOptions, Rasterizer, RasterConfig};
use crate::rgb::RgbImage;
use crate::splat::linalg::Vec3;
use crate::splat::{Camera, GaussianSet};
use crate::trainer::{AdamConfig, AdamState};

pub const MAX_ITERATIONS: usize = 10_000;

/// Which Gaussians are rasterized while stylizing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderScope {
    /// The whole scene; unselected Gaussians appear but stay frozen.
    #[default]
    Scene,
    /// Only the selected Gaussians over the background. The result then
    /// depends on nothing outside the selection.
    Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleParams {
    pub iterations: usize,
    pub lr: f32,
    pub layers: Vec<usize>,
    pub style_scale: f32,
    pub view_fraction: f32,
    pub variant: NnfmVariant,
    pub scope: RenderScope,
    /// Weight of an L1 term pulling renders toward the unstylized scene.
    pub content_weight: f32,
    pub background: Vec3,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            iterations: 800,
            lr: 0.05,
            layers: DEFAULT_LAYERS.to_vec(),
            style_scale: 1.0,
            view_fraction: 0.25,
            variant: NnfmVariant::Cosine,
            scope: RenderScope::Scene,
            content_weight: 0.0,
            background: [0.0; 3],
        }
    }
}

impl StyleParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.iterations > MAX_ITERATIONS {
            return Err(Error::invalid(format!(
                "style iterations {} outside [1, {MAX_ITERATIONS}]",
                self.iterations
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("style learning rate {} must be positive", self.lr)));
        }
        if !(self.style_scale > 0.0 && self.style_scale <= 1.0) {
            return Err(Error::invalid(format!("style_scale {} outside (0, 1]", self.style_scale)));
        }
        if !(self.view_fraction > 0.0 && self.view_fraction <= 1.0) {
            return Err(Error::invalid(format!("view fraction {} outside (0, 1]", self.view_fraction)));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("no style layers given"));
        }
        if !(self.content_weight.is_finite() && self.content_weight >= 0.0) {
            return Err(Error::invalid(format!("content weight {} must be ≥ 0", self.content_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleJob {
    /// Sorted, unique Gaussian indices whose SH may change.
    pub selection: Vec<usize>,
    pub style: RgbImage,
    pub params: StyleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleLog {
    pub iteration: usize,
    pub view: usize,
    pub layer_losses: Vec<f32>,
    pub nnfm: f32,
    pub content: f32,
    pub total: f32,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct StyleOutput {
    pub gaussians: GaussianSet,
    pub log: Vec<StyleLog>,
}

/// Evenly spaced views `⌊i·V/⌈f·V⌉⌋`.
pub fn select_views(num_views: usize, fraction: f32) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("view fraction {fraction} outside (0, 1]")));
    }
    if num_views == 0 {
        return Ok(Vec::new());
    }
    let count = ((fraction as f64 * num_views as f64).ceil() as usize).clamp(1, num_views);
    let mut v: Vec<usize> = (0..count).map(|i| i * num_views / count).collect();
    v.dedup();
    Ok(v)
}

/// Style features of `style` resized by `style_scale`, extracted once.
pub fn prepare_style_features(
    extractor: &FeatureExtractor,
    style: &RgbImage,
    style_scale: f32,
    layers: &[usize],
) -> Result<FeatureStack> {
    if !(style_scale > 0.0 && style_scale <= 1.0) {
        return Err(Error::invalid(format!("style_scale {style_scale} outside (0, 1]")));
    }
    if style_scale == 1.0 {
        return extractor.extract(style, layers);
    }
    let (w, h) = style.scaled_size(style_scale);
    extractor.extract(&style.resize_bilinear(w, h), layers)
}

fn check_selection(selection: &[usize], n: usize) -> Result<()> {
    if selection.is_empty() {
        return Err(Error::invalid("empty selection: nothing to stylize"));
    }
    if selection.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("selection indices must be sorted and unique"));
    }
    if let Some(&last) = selection.last() {
        if last >= n {
            return Err(Error::invalid(format!("selection index {last} out of range for {n} Gaussians")));
        }
    }
    Ok(())
}

/// The Gaussians that get rasterized, and where selected SH live inside them.
struct Workspace {
    scene: GaussianSet,
    /// Index into `scene` of each selected Gaussian.
    slots: Vec<usize>,
}

impl Workspace {
    fn new(gaussians: &GaussianSet, selection: &[usize], scope: RenderScope) -> Self {
        match scope {
            RenderScope::Scene => Workspace {
                scene: gaussians.clone(),
                slots: selection.to_vec(),
            },
            RenderScope::Selection => Workspace {
                scene: gaussians.subset(selection),
                slots: (0..selection.len()).collect(),
            },
        }
    }

    fn gather_sh(&self) -> Vec<f32> {
        self.slots.iter().flat_map(|&i| self.scene.sh(i).iter().copied()).collect()
    }

    fn scatter_sh(&mut self, sh: &[f32]) {
        let k = self.scene.coeffs_per_gaussian();
        for (s, &i) in self.slots.iter().enumerate() {
            self.scene.sh_mut(i).copy_from_slice(&sh[s * k..(s + 1) * k]);
        }
    }
}

struct Step {
    nnfm: NnfmLoss,
    content: f32,
    sh_grad: Vec<f32>,
}

fn to_image(width: u32, height: u32, color: Vec<f32>) -> RgbImage {
    RgbImage { width, height, data: color }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    raster: &Rasterizer,
    extractor: &FeatureExtractor,
    ws: &Workspace,
    camera: &Camera,
    style: &FeatureStack,
    params: &StyleParams,
    reference: Option<&[f32]>,
    with_grad: bool,
) -> Result<Step> {
    let out = raster.render_color(&ws.scene, camera, params.background);
    let image = to_image(out.width, out.height, out.color.clone());
    let (features, cache) = extractor.forward(&image, &params.layers)?;
    let nnfm = nnfm_loss(&features, style, params.variant)?;
    let mut content = 0.0f32;
    let mut content_grad = None;
    if let Some(reference) = reference.filter(|_| params.content_weight > 0.0) {
        let scale = params.content_weight / reference.len() as f32;
        let mut g = vec![0.0f32; reference.len()];
        let mut sum = 0.0f64;
        for ((gv, &a), &b) in g.iter_mut().zip(&out.color).zip(reference) {
            sum += (a - b).abs() as f64;
            *gv = if a > b { scale } else if a < b { -scale } else { 0.0 };
        }
        content = params.content_weight * (sum / reference.len() as f64) as f32;
        content_grad = Some(g);
    }
    if !with_grad {
        return Ok(Step { nnfm, content, sh_grad: Vec::new() });
    }
    let mut upstream = extractor.backward(&cache, &nnfm.grads)?;
    if let Some(g) = content_grad {
        for (u, c) in upstream.iter_mut().zip(g) {
            *u += c;
        }
    }
    let grads = raster.render_color_backward(
        &ws.scene,
        camera,
        &out,
        &upstream,
        &BackwardOptions { geometry: false, sh: true },
    );
    let k = ws.scene.coeffs_per_gaussian();
    let sh_grad = ws
        .slots
        .iter()
        .flat_map(|&i| grads.sh_coeffs[i * k..(i + 1) * k].iter().copied())
        .collect();
    Ok(Step { nnfm, content, sh_grad })
}

/// Mean NNFM loss of the current scene over the style view subset, without
/// updating anything.
pub fn subset_nnfm(
    gaussians: &GaussianSet,
    cameras: &[Camera],
    job: &StyleJob,
    extractor: &FeatureExtractor,
) -> Result<f32> {
    job.params.validate()?;
    check_selection(&job.selection, gaussians.len())?;
    let style = prepare_style_features(extractor, &job.style, job.params.style_scale, &job.params.layers)?;
    let views = select_views(cameras.len(), job.params.view_fraction)?;
    if views.is_empty() {
        return Err(Error::invalid("no cameras to stylize against"));
    }
    let ws = Workspace::new(gaussians, &job.selection, job.params.scope);
    let raster = Rasterizer::new(RasterConfig::default());
    let mut sum = 0.0f64;
    for &v in &views {
        sum += evaluate(&raster, extractor, &ws, &cameras[v], &style, &job.params, None, false)?.nnfm.total as f64;
    }
    Ok((sum / views.len() as f64) as f32)
}

/// Runs a style job. Only the SH coefficients of `job.selection` change; every
/// other value in the returned set is a bitwise copy of the input.
pub fn stylize(
    gaussians: &GaussianSet,
    cameras: &[Camera],
    job: &StyleJob,
    extractor: &FeatureExtractor,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<StyleOutput> {
    let params = &job.params;
    params.validate()?;
    check_selection(&job.selection, gaussians.len())?;
    let style = prepare_style_features(extractor, &job.style, params.style_scale, &params.layers)?;
    let views = select_views(cameras.len(), params.view_fraction)?;
    if views.is_empty() {
        return Err(Error::invalid("no cameras to stylize against"));
    }
    let raster = Rasterizer::new(RasterConfig::default());
    let mut ws = Workspace::new(gaussians, &job.selection, params.scope);
    let references: Vec<Option<Vec<f32>>> = views
        .iter()
        .map(|&v| {
            (params.content_weight > 0.0)
                .then(|| raster.render_color(&ws.scene, &cameras[v], params.background).color)
        })
        .collect();

    let mut sh = ws.gather_sh();
    let mut adam = AdamState::new(AdamConfig::default(), &[("sh", params.lr, sh.len())]);
    let start = Instant::now();
    let mut log = Vec::with_capacity(params.iterations);
    for it in 0..params.iterations {
        let slot = it % views.len();
        let view = views[slot];
        let step = evaluate(
            &raster,
            extractor,
            &ws,
            &cameras[view],
            &style,
            params,
            references[slot].as_deref(),
            true,
        )?;
        let total = step.nnfm.total + step.content;
        if !total.is_finite() {
            return Err(Error::Divergence {
                iteration: it + 1,
                message: format!(
                    "style loss is {total} on view {view} (layer losses {:?})",
                    step.nnfm.per_layer
                ),
            });
        }
        adam.apply(&mut [&mut sh], &[&step.sh_grad]).map_err(|e| match e {
            Error::NonFiniteGradient { group } => Error::Divergence {
                iteration: it + 1,
                message: format!("non-finite gradient in `{group}` on view {view}"),
            },
            other => other,
        })?;
        ws.scatter_sh(&sh);
        let record = StyleLog {
            iteration: it + 1,
            view,
            layer_losses: step.nnfm.per_layer,
            nnfm: step.nnfm.total,
            content: step.content,
            total,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("log records serialize");
            writeln!(sink, "{line}").map_err(|e| Error::Data(format!("writing style log: {e}")))?;
        }
        log.push(record);
    }

    let mut out = gaussians.clone();
    let k = out.coeffs_per_gaussian();
    for (s, &i) in job.selection.iter().enumerate() {
        out.sh_mut(i).copy_from_slice(&sh[s * k..(s + 1) * k]);
    }
    Ok(StyleOutput { gaussians: out, log })
}
