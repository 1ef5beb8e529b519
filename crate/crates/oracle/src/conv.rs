//! Plain-loop convolutional network forward pass in f64 (CHW layout).

#[derive(Debug, Clone)]
pub enum RefLayer {
    /// 3×3, stride 1, zero padding 1. Weights `[out][in][ky][kx]` flattened.
    Conv {
        out_ch: usize,
        in_ch: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    MaxPool,
}

#[derive(Debug, Clone)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

pub fn apply(layer: &RefLayer, x: &Tensor) -> Tensor {
    match layer {
        RefLayer::Conv {
            out_ch,
            in_ch,
            weights,
            bias,
        } => {
            assert_eq!(*in_ch, x.c);
            let mut data = vec![0.0; out_ch * x.h * x.w];
            for o in 0..*out_ch {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let mut s = bias[o];
                        for i in 0..*in_ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                        continue;
                                    }
                                    s += weights[((o * in_ch + i) * 3 + ky) * 3 + kx]
                                        * x.at(i, sy as usize, sx as usize);
                                }
                            }
                        }
                        data[(o * x.h + y) * x.w + xx] = s;
                    }
                }
            }
            Tensor {
                c: *out_ch,
                h: x.h,
                w: x.w,
                data,
            }
        }
        RefLayer::Relu => Tensor {
            data: x.data.iter().map(|v| v.max(0.0)).collect(),
            ..x.clone()
        },
        RefLayer::MaxPool => {
            let (h, w) = (x.h / 2, x.w / 2);
            let mut data = vec![0.0; x.c * h * w];
            for c in 0..x.c {
                for y in 0..h {
                    for xx in 0..w {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(x.at(c, 2 * y + dy, 2 * xx + dx));
                            }
                        }
                        data[(c * h + y) * w + xx] = m;
                    }
                }
            }
            Tensor { c: x.c, h, w, data }
        }
    }
}

/// Activations after every layer.
pub fn forward_all(layers: &[RefLayer], input: &Tensor) -> Vec<Tensor> {
    let mut acts = Vec::with_capacity(layers.len());
    let mut cur = input.clone();
    for l in layers {
        cur = apply(l, &cur);
        acts.push(cur.clone());
    }
    acts
}

/// Receptive field of one activation after `layer_index`, by composing
/// kernel extents and strides layer by layer.
pub fn receptive_field(layers: &[RefLayer], layer_index: usize) -> usize {
    let mut field = 1usize;
    let mut jump = 1usize;
    for l in &layers[..=layer_index] {
        match l {
            RefLayer::Conv { .. } => field += 2 * jump,
            RefLayer::Relu => {}
            RefLayer::MaxPool => {
                field += jump;
                jump *= 2;
            }
        }
    }
    field
}
