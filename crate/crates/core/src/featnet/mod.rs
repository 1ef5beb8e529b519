//! Fixed VGG-16-style convolutional feature extractor.
//!
//! Layers are indexed in the flattened sequence `conv, relu, conv, relu, pool, ...`
//! so index 1 is the first relu output, 15 is the third relu of the third block.

mod conv;
mod weights;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rgb::RgbImage;

pub const DEFAULT_LAYERS: [usize; 3] = [11, 13, 15];
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// VGG-16 conv widths; `0` marks a pool.
const VGG16_PLAN: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// 3×3, stride 1, zero padding 1.
    Conv { in_ch: usize, out_ch: usize },
    Relu,
    /// 2×2, stride 2.
    MaxPool,
}

/// The full 31-layer VGG-16 feature sequence.
pub fn vgg16_layers() -> Vec<LayerKind> {
    let mut layers = Vec::new();
    let mut ch = 3;
    for &width in &VGG16_PLAN {
        if width == 0 {
            layers.push(LayerKind::MaxPool);
        } else {
            layers.push(LayerKind::Conv { in_ch: ch, out_ch: width });
            layers.push(LayerKind::Relu);
            ch = width;
        }
    }
    layers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Per-channel `(x - mean) / std` with ImageNet statistics.
    ImageNet,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub out_ch: usize,
    pub in_ch: usize,
    /// `out×in×3×3`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `C×H×W`, so row `c` is channel `c` over all locations.
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn locations(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub maps: Vec<FeatureMap>,
    pub source_width: u32,
    pub source_height: u32,
}

impl FeatureStack {
    pub fn layers(&self) -> Vec<usize> {
        self.maps.iter().map(|m| m.layer).collect()
    }
}

/// Everything the backward pass replays: per-layer inputs and pool routing.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    requested: Vec<usize>,
    /// Input to layer `l` and its `(C, H, W)`.
    inputs: Vec<(Vec<f32>, [usize; 3])>,
    pool_args: Vec<Option<Vec<u32>>>,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<LayerKind>,
    /// Parameters of each conv, in layer order.
    convs: Vec<ConvParams>,
    normalization: Normalization,
}

impl FeatureExtractor {
    /// Builds an extractor from an explicit layer list. Conv parameters are
    /// matched to `Conv` layers in order.
    pub fn from_parts(layers: Vec<LayerKind>, convs: Vec<ConvParams>, normalization: Normalization) -> Result<Self> {
        let mut ch = 3;
        let mut ci = 0;
        for (index, layer) in layers.iter().enumerate() {
            if let LayerKind::Conv { in_ch, out_ch } = *layer {
                let p = convs.get(ci).ok_or_else(|| Error::Weights {
                    layer: index,
                    message: "missing conv parameters".into(),
                })?;
                if in_ch != ch || p.in_ch != in_ch || p.out_ch != out_ch {
                    return Err(Error::Weights {
                        layer: index,
                        message: format!(
                            "expected {}×{}×3×3 on {} input channels, got {}×{}×3×3",
                            out_ch, in_ch, ch, p.out_ch, p.in_ch
                        ),
                    });
                }
                if p.weights.len() != out_ch * in_ch * 9 || p.bias.len() != out_ch {
                    return Err(Error::Weights {
                        layer: index,
                        message: "tensor length does not match declared shape".into(),
                    });
                }
                ch = out_ch;
                ci += 1;
            }
        }
        if ci != convs.len() {
            return Err(Error::Weights {
                layer: layers.len(),
                message: format!("{} conv tensors for {} conv layers", convs.len(), ci),
            });
        }
        Ok(FeatureExtractor {
            layers,
            convs,
            normalization,
        })
    }

    /// Orthogonal random weights (He-style gain, zero bias); each conv draws
    /// from its own stream so a shorter network is a prefix of a longer one.
    pub fn seeded(layers: Vec<LayerKind>, seed: u64, normalization: Normalization) -> Result<Self> {
        let mut convs = Vec::new();
        for layer in &layers {
            if let LayerKind::Conv { in_ch, out_ch } = *layer {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(convs.len() as u64);
                convs.push(ConvParams {
                    out_ch,
                    in_ch,
                    weights: orthogonal(out_ch, in_ch * 9, &mut rng),
                    bias: vec![0.0; out_ch],
                });
            }
        }
        Self::from_parts(layers, convs, normalization)
    }

    /// Seeded VGG-16 truncated after `through_layer` (the whole network if `None`).
    pub fn seeded_vgg16(seed: u64, through_layer: Option<usize>) -> Result<Self> {
        let mut layers = vgg16_layers();
        if let Some(last) = through_layer {
            if last >= layers.len() {
                return Err(Error::invalid(format!("layer {last} out of range 0..{}", layers.len())));
            }
            layers.truncate(last + 1);
        }
        Self::seeded(layers, seed, Normalization::ImageNet)
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        weights::decode(&bytes)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, weights::encode(&self.convs)).map_err(|e| Error::io(path, e))
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn convs(&self) -> &[ConvParams] {
        &self.convs
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::invalid(format!(
                "layer {layer} out of range; extractor has {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Receptive field, in input pixels, of one activation at `layer`.
    pub fn receptive_field_size(&self, layer: usize) -> Result<usize> {
        self.check_layer(layer)?;
        let mut rf = 1;
        let mut jump = 1;
        for kind in &self.layers[..=layer] {
            match kind {
                LayerKind::Conv { .. } => rf += 2 * jump,
                LayerKind::Relu => {}
                LayerKind::MaxPool => {
                    rf += jump;
                    jump *= 2;
                }
            }
        }
        Ok(rf)
    }

    fn pools_through(&self, layer: usize) -> u32 {
        self.layers[..=layer]
            .iter()
            .filter(|k| matches!(k, LayerKind::MaxPool))
            .count() as u32
    }

    /// Smallest input side for which `layer` has a non-empty output.
    pub fn min_input_size(&self, layer: usize) -> Result<usize> {
        self.check_layer(layer)?;
        Ok(1 << self.pools_through(layer))
    }

    /// Spatial `(height, width)` of the activation at `layer` for an input of the given size.
    pub fn output_size(&self, layer: usize, height: usize, width: usize) -> Result<(usize, usize)> {
        self.check_layer(layer)?;
        let p = self.pools_through(layer);
        Ok((height >> p, width >> p))
    }

    pub fn extract(&self, image: &RgbImage, layers: &[usize]) -> Result<FeatureStack> {
        Ok(self.forward(image, layers)?.0)
    }

    pub fn forward(&self, image: &RgbImage, layers: &[usize]) -> Result<(FeatureStack, ForwardCache)> {
        if layers.is_empty() {
            return Err(Error::invalid("no extraction layers requested"));
        }
        for &l in layers {
            self.check_layer(l)?;
        }
        let deepest = *layers.iter().max().unwrap();
        let need = self.min_input_size(deepest)?;
        let (h, w) = (image.height as usize, image.width as usize);
        if h < need || w < need {
            return Err(Error::invalid(format!(
                "image {w}×{h} too small for layer {deepest}; minimum size is {need}×{need}"
            )));
        }

        let mut x = vec![0.0f32; 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                let v = image.data[p * 3 + c];
                x[c * h * w + p] = match self.normalization {
                    Normalization::ImageNet => (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c],
                    Normalization::None => v,
                };
            }
        }
        let mut dims = [3, h, w];
        let mut inputs = Vec::with_capacity(deepest + 1);
        let mut pool_args = Vec::with_capacity(deepest + 1);
        let mut conv_index = 0;
        let mut captured: Vec<Option<FeatureMap>> = vec![None; deepest + 1];
        for (index, kind) in self.layers[..=deepest].iter().enumerate() {
            let [c, hh, ww] = dims;
            let (y, ydims, arg) = match *kind {
                LayerKind::Conv { out_ch, .. } => {
                    let p = &self.convs[conv_index];
                    conv_index += 1;
                    (conv::conv3x3(&x, c, hh, ww, &p.weights, Some(&p.bias), out_ch), [out_ch, hh, ww], None)
                }
                LayerKind::Relu => (x.iter().map(|v| v.max(0.0)).collect(), dims, None),
                LayerKind::MaxPool => {
                    let (y, arg) = conv::maxpool2(&x, c, hh, ww);
                    (y, [c, hh / 2, ww / 2], Some(arg))
                }
            };
            if layers.contains(&index) {
                captured[index] = Some(FeatureMap {
                    layer: index,
                    channels: ydims[0],
                    height: ydims[1],
                    width: ydims[2],
                    data: y.clone(),
                });
            }
            inputs.push((std::mem::replace(&mut x, y), dims));
            pool_args.push(arg);
            dims = ydims;
        }
        let maps = layers
            .iter()
            .map(|&l| captured[l].clone().expect("captured above"))
            .collect();
        Ok((
            FeatureStack {
                maps,
                source_width: image.width,
                source_height: image.height,
            },
            ForwardCache {
                requested: layers.to_vec(),
                inputs,
                pool_args,
                width: w,
                height: h,
            },
        ))
    }

    /// Input gradient (`H×W×3`, image layout) given one upstream gradient per
    /// requested layer, in the order they were requested.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[Vec<f32>]) -> Result<Vec<f32>> {
        if upstream.len() != cache.requested.len() {
            return Err(Error::invalid(format!(
                "{} upstream gradients for {} layers",
                upstream.len(),
                cache.requested.len()
            )));
        }
        let deepest = cache.inputs.len() - 1;
        let out_len = |l: usize| -> usize {
            if l == deepest {
                let [c, h, w] = cache.inputs[l].1;
                match self.layers[l] {
                    LayerKind::Conv { out_ch, .. } => out_ch * h * w,
                    LayerKind::Relu => c * h * w,
                    LayerKind::MaxPool => c * (h / 2) * (w / 2),
                }
            } else {
                cache.inputs[l + 1].0.len()
            }
        };
        let mut conv_index = self.layers[..=deepest]
            .iter()
            .filter(|k| matches!(k, LayerKind::Conv { .. }))
            .count();
        let mut grad = vec![0.0f32; out_len(deepest)];
        for l in (0..=deepest).rev() {
            for (k, &req) in cache.requested.iter().enumerate() {
                if req == l {
                    if upstream[k].len() != grad.len() {
                        return Err(Error::invalid(format!(
                            "upstream for layer {l} has {} values, expected {}",
                            upstream[k].len(),
                            grad.len()
                        )));
                    }
                    for (g, u) in grad.iter_mut().zip(&upstream[k]) {
                        *g += u;
                    }
                }
            }
            let (input, [c, h, w]) = &cache.inputs[l];
            grad = match self.layers[l] {
                LayerKind::Conv { in_ch, out_ch } => {
                    conv_index -= 1;
                    conv::conv3x3_input_grad(&grad, out_ch, *h, *w, &self.convs[conv_index].weights, in_ch)
                }
                LayerKind::Relu => grad
                    .iter()
                    .zip(input)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                LayerKind::MaxPool => {
                    let mut gin = vec![0.0f32; c * h * w];
                    let args = cache.pool_args[l].as_ref().expect("pool routing cached");
                    for (g, &a) in grad.iter().zip(args) {
                        gin[a as usize] += g;
                    }
                    gin
                }
            };
        }
        let (h, w) = (cache.height, cache.width);
        let mut out = vec![0.0f32; h * w * 3];
        for p in 0..h * w {
            for c in 0..3 {
                let g = grad[c * h * w + p];
                out[p * 3 + c] = match self.normalization {
                    Normalization::ImageNet => g / IMAGENET_STD[c],
                    Normalization::None => g,
                };
            }
        }
        Ok(out)
    }

    pub fn extract_backward(&self, image: &RgbImage, layers: &[usize], upstream: &[Vec<f32>]) -> Result<Vec<f32>> {
        let (_, cache) = self.forward(image, layers)?;
        self.backward(&cache, upstream)
    }
}

/// `rows×cols` matrix with orthonormal rows (or columns, if taller than
/// wide), scaled so the mean squared row norm is 2.
fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
            let (head, tail) = a.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= d * y;
            }
        }
        let norm = a[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        a[i].iter_mut().for_each(|x| *x /= norm);
    }
    let gain = (2.0 * rows as f64 / n as f64).sqrt();
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows <= cols { a[r][c] } else { a[c][r] };
            out[r * cols + c] = (gain * v) as f32;
        }
    }
    out
}
