//! 3×3 same-padding convolution via im2col and sgemm, plus 2×2 max pooling.

use rayon::prelude::*;

/// Output pixels per im2col block. Fixed so results do not depend on the
/// thread count.
const BLOCK: usize = 1024;

/// `input` is `in_ch×h×w`; `weights` is `out_ch×in_ch×3×3`. Returns `out_ch×h×w`.
pub(crate) fn conv3x3(
    input: &[f32],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    bias: Option<&[f32]>,
    out_ch: usize,
) -> Vec<f32> {
    let hw = h * w;
    let k = in_ch * 9;
    debug_assert_eq!(input.len(), in_ch * hw);
    debug_assert_eq!(weights.len(), out_ch * k);
    let blocks: Vec<(usize, Vec<f32>)> = (0..hw.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let p0 = b * BLOCK;
            let n = BLOCK.min(hw - p0);
            let mut cols = vec![0.0f32; k * n];
            for ci in 0..in_ch {
                let plane = &input[ci * hw..(ci + 1) * hw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let row = &mut cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                        for (j, v) in row.iter_mut().enumerate() {
                            let p = p0 + j;
                            let y = (p / w) as isize + ky as isize - 1;
                            let x = (p % w) as isize + kx as isize - 1;
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                *v = plane[y as usize * w + x as usize];
                            }
                        }
                    }
                }
            }
            let mut out = vec![0.0f32; out_ch * n];
            if let Some(bias) = bias {
                for (o, &bv) in bias.iter().enumerate() {
                    out[o * n..(o + 1) * n].fill(bv);
                }
            }
            // out (out_ch×n) += W (out_ch×k) · cols (k×n)
            unsafe {
                matrixmultiply::sgemm(
                    out_ch,
                    k,
                    n,
                    1.0,
                    weights.as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    n as isize,
                    1,
                    if bias.is_some() { 1.0 } else { 0.0 },
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            (p0, out)
        })
        .collect();
    let mut output = vec![0.0f32; out_ch * hw];
    for (p0, block) in blocks {
        let n = block.len() / out_ch.max(1);
        for o in 0..out_ch {
            output[o * hw + p0..o * hw + p0 + n].copy_from_slice(&block[o * n..(o + 1) * n]);
        }
    }
    output
}

/// Gradient with respect to the input of a 3×3 same-padding convolution:
/// a convolution of `grad_out` with the spatially flipped, channel-transposed kernel.
pub(crate) fn conv3x3_input_grad(
    grad_out: &[f32],
    out_ch: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    in_ch: usize,
) -> Vec<f32> {
    let mut flipped = vec![0.0f32; weights.len()];
    for o in 0..out_ch {
        for i in 0..in_ch {
            for ky in 0..3 {
                for kx in 0..3 {
                    flipped[((i * out_ch + o) * 3 + (2 - ky)) * 3 + (2 - kx)] =
                        weights[((o * in_ch + i) * 3 + ky) * 3 + kx];
                }
            }
        }
    }
    conv3x3(grad_out, out_ch, h, w, &flipped, None, in_ch)
}

/// 2×2 stride-2 max pool with floor sizing. Returns the pooled map and the
/// flat input index chosen for each output (first maximum wins).
pub(crate) fn maxpool2(input: &[f32], ch: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; ch * oh * ow];
    let mut arg = vec![0u32; ch * oh * ow];
    for c in 0..ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut at = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (c * h + 2 * y + dy) * w + 2 * x + dx;
                        if input[idx] > best {
                            best = input[idx];
                            at = idx;
                        }
                    }
                }
                let o = (c * oh + y) * ow + x;
                out[o] = best;
                arg[o] = at as u32;
            }
        }
    }
    (out, arg)
}
