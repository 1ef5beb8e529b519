//! Nearest-neighbor feature matching between rendered and style feature maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featnet::{FeatureMap, FeatureStack};

/// Render locations per similarity block. Fixed so results do not depend on
/// the thread count.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnfmVariant {
    /// `1 − max_j cos(r_i, s_j)`.
    #[default]
    Cosine,
    /// `min_j r_i · s_j`, unnormalized.
    RawDot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnfmLoss {
    pub total: f32,
    /// One entry per layer, in stack order.
    pub per_layer: Vec<f32>,
    /// Gradient of `total` with respect to each render map, `C×H×W`.
    pub grads: Vec<Vec<f32>>,
}

/// NNFM loss summed over layers, each layer averaged over render locations.
/// Style features are treated as constants.
pub fn nnfm_loss(render: &FeatureStack, style: &FeatureStack, variant: NnfmVariant) -> Result<NnfmLoss> {
    if style.maps.is_empty() {
        return Err(Error::invalid("style feature stack is empty"));
    }
    if render.layers() != style.layers() {
        return Err(Error::invalid(format!(
            "render layers {:?} do not match style layers {:?}",
            render.layers(),
            style.layers()
        )));
    }
    let mut per_layer = Vec::with_capacity(render.maps.len());
    let mut grads = Vec::with_capacity(render.maps.len());
    for (r, s) in render.maps.iter().zip(&style.maps) {
        if r.channels != s.channels {
            return Err(Error::invalid(format!(
                "layer {}: {} render channels vs {} style channels",
                r.layer, r.channels, s.channels
            )));
        }
        if s.locations() == 0 {
            return Err(Error::invalid(format!("layer {}: no style features", s.layer)));
        }
        let (loss, grad) = layer_loss(r, s, variant);
        per_layer.push(loss);
        grads.push(grad);
    }
    let total = per_layer.iter().map(|&l| l as f64).sum::<f64>() as f32;
    Ok(NnfmLoss { total, per_layer, grads })
}

/// Location-major copy of a `C×N` map, each row optionally scaled to unit
/// length. Returns the rows and their original norms.
fn rows(map: &FeatureMap, normalize: bool) -> (Vec<f32>, Vec<f64>) {
    let (c, n) = (map.channels, map.locations());
    let mut out = vec![0.0f32; n * c];
    let mut norms = vec![0.0f64; n];
    for i in 0..n {
        let mut sq = 0.0f64;
        for k in 0..c {
            let v = map.data[k * n + i];
            out[i * c + k] = v;
            sq += v as f64 * v as f64;
        }
        norms[i] = sq.sqrt();
        if normalize {
            let inv = if norms[i] > 0.0 { 1.0 / norms[i] } else { 0.0 };
            for v in &mut out[i * c..(i + 1) * c] {
                *v = (*v as f64 * inv) as f32;
            }
        }
    }
    (out, norms)
}

fn layer_loss(r: &FeatureMap, s: &FeatureMap, variant: NnfmVariant) -> (f32, Vec<f32>) {
    let c = r.channels;
    let (n, m) = (r.locations(), s.locations());
    let cosine = variant == NnfmVariant::Cosine;
    let (rr, rnorm) = rows(r, cosine);
    let (ss, snorm) = rows(s, cosine);

    // best style match per render location, by blocks of render rows
    let best: Vec<usize> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            let lo = b * BLOCK;
            let rows_here = BLOCK.min(n - lo);
            let mut sim = vec![0.0f32; rows_here * m];
            // SAFETY: dimensions and strides describe the live buffers above.
            unsafe {
                matrixmultiply::sgemm(
                    rows_here,
                    c,
                    m,
                    1.0,
                    rr[lo * c..].as_ptr(),
                    c as isize,
                    1,
                    ss.as_ptr(),
                    1,
                    c as isize,
                    0.0,
                    sim.as_mut_ptr(),
                    m as isize,
                    1,
                );
            }
            (0..rows_here)
                .map(|i| {
                    let row = &sim[i * m..(i + 1) * m];
                    let mut arg = 0;
                    for j in 1..m {
                        let better = if cosine { row[j] > row[arg] } else { row[j] < row[arg] };
                        if better {
                            arg = j;
                        }
                    }
                    arg
                })
                .collect::<Vec<_>>()
        })
        .collect();

    // exact re-evaluation of the chosen pair in f64
    let mut grad = vec![0.0f32; c * n];
    let mut sum = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let j = best[i];
        let ri = &r.data;
        let dot: f64 = (0..c).map(|k| ri[k * n + i] as f64 * s.data[k * m + j] as f64).sum();
        if !cosine {
            sum += dot;
            for k in 0..c {
                grad[k * n + i] = (s.data[k * m + j] as f64 * inv_n) as f32;
            }
            continue;
        }
        if rnorm[i] == 0.0 {
            sum += 1.0;
            continue;
        }
        if snorm[j] == 0.0 {
            // a zero style vector won with cosine 0, which is flat in r
            sum += 1.0;
            continue;
        }
        let cos = dot / (rnorm[i] * snorm[j]);
        sum += 1.0 - cos;
        // d(1 − cos)/dr = −(ŝ − cos·r̂)/|r|
        for k in 0..c {
            let rhat = ri[k * n + i] as f64 / rnorm[i];
            let shat = s.data[k * m + j] as f64 / snorm[j];
            grad[k * n + i] = (-(shat - cos * rhat) / rnorm[i] * inv_n) as f32;
        }
    }
    ((sum * inv_n) as f32, grad)
}
