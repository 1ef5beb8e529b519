use rayon::prelude::*;

use super::prepare::PreparedView;
use crate::splat::projection::FOOTPRINT_SIGMA;

/// Result of blending a `dim`-channel payload.
#[derive(Debug, Clone)]
pub struct Composite {
    pub dim: usize,
    /// `H×W×dim`, background term included.
    pub values: Vec<f32>,
    pub final_transmittance: Vec<f32>,
    pub weight_sum: Vec<f32>,
    pub contributors: Vec<u32>,
    /// Number of tile-list entries consumed per pixel before stopping.
    pub(crate) walk_len: Vec<u32>,
}

/// Outcome of evaluating one splat at one pixel.
pub(crate) enum Sample {
    Skip,
    Blend { alpha: f32, gaussian: f32, clamped: bool, dx: f32, dy: f32 },
}

#[inline]
pub(crate) fn sample(view: &PreparedView, pos: usize, px: f32, py: f32) -> Sample {
    let s = &view.splats[pos];
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [a, b, c] = s.conic;
    let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if maha > FOOTPRINT_SIGMA * FOOTPRINT_SIGMA {
        return Sample::Skip;
    }
    let gaussian = (-0.5 * maha).exp();
    let raw = s.opacity * gaussian;
    let alpha = raw.min(view.config.alpha_max);
    if alpha < view.config.alpha_skip {
        return Sample::Skip;
    }
    Sample::Blend {
        alpha,
        gaussian,
        clamped: raw > view.config.alpha_max,
        dx,
        dy,
    }
}

struct TileOut {
    values: Vec<f32>,
    transmittance: Vec<f32>,
    weight_sum: Vec<f32>,
    contributors: Vec<u32>,
    walk_len: Vec<u32>,
}

impl PreparedView {
    /// Blends `payload` (one `dim`-vector per sorted splat) front to back over
    /// `background`.
    pub fn composite(&self, payload: &[f32], dim: usize, background: &[f32]) -> Composite {
        assert_eq!(payload.len(), self.splats.len() * dim);
        assert_eq!(background.len(), dim);
        let (w, h) = (self.width as usize, self.height as usize);
        let t_stop = self.config.t_stop;

        let tiles: Vec<TileOut> = (0..self.tile_count())
            .into_par_iter()
            .map(|tile| {
                let (x0, y0, x1, y1) = self.tiles.bounds(tile, self.width, self.height);
                let list = &self.tiles.lists[tile];
                let n = ((x1 - x0) * (y1 - y0)) as usize;
                let mut out = TileOut {
                    values: vec![0.0; n * dim],
                    transmittance: vec![1.0; n],
                    weight_sum: vec![0.0; n],
                    contributors: vec![0; n],
                    walk_len: vec![0; n],
                };
                let mut local = 0;
                for py in y0..y1 {
                    for px in x0..x1 {
                        let acc = &mut out.values[local * dim..(local + 1) * dim];
                        let mut t = 1.0f32;
                        let mut wsum = 0.0f32;
                        let mut count = 0u32;
                        let mut walked = list.len();
                        for (k, &pos) in list.iter().enumerate() {
                            let pos = pos as usize;
                            let Sample::Blend { alpha, .. } = sample(self, pos, px as f32, py as f32) else {
                                continue;
                            };
                            let next = t * (1.0 - alpha);
                            if next < t_stop {
                                walked = k;
                                break;
                            }
                            let wgt = alpha * t;
                            let src = &payload[pos * dim..(pos + 1) * dim];
                            for (a, s) in acc.iter_mut().zip(src) {
                                *a += wgt * s;
                            }
                            wsum += wgt;
                            count += 1;
                            t = next;
                        }
                        for (a, b) in acc.iter_mut().zip(background) {
                            *a += t * b;
                        }
                        out.transmittance[local] = t;
                        out.weight_sum[local] = wsum;
                        out.contributors[local] = count;
                        out.walk_len[local] = walked as u32;
                        local += 1;
                    }
                }
                out
            })
            .collect();

        let mut result = Composite {
            dim,
            values: vec![0.0; w * h * dim],
            final_transmittance: vec![1.0; w * h],
            weight_sum: vec![0.0; w * h],
            contributors: vec![0; w * h],
            walk_len: vec![0; w * h],
        };
        for (tile, out) in tiles.into_iter().enumerate() {
            let (x0, y0, x1, y1) = self.tiles.bounds(tile, self.width, self.height);
            let tw = (x1 - x0) as usize;
            for (row, py) in (y0..y1).enumerate() {
                let dst = py as usize * w + x0 as usize;
                let src = row * tw;
                result.values[dst * dim..(dst + tw) * dim]
                    .copy_from_slice(&out.values[src * dim..(src + tw) * dim]);
                result.final_transmittance[dst..dst + tw].copy_from_slice(&out.transmittance[src..src + tw]);
                result.weight_sum[dst..dst + tw].copy_from_slice(&out.weight_sum[src..src + tw]);
                result.contributors[dst..dst + tw].copy_from_slice(&out.contributors[src..src + tw]);
                result.walk_len[dst..dst + tw].copy_from_slice(&out.walk_len[src..src + tw]);
            }
        }
        result
    }
}
