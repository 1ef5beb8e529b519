//! `FNET` weight files: little-endian, magic, version, conv count, then per
//! conv `out, in, kh, kw` as u32 followed by weights and biases as f32.

use super::{vgg16_layers, ConvParams, FeatureExtractor, LayerKind, Normalization};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FNET";
const VERSION: u32 = 1;

pub(super) fn encode(convs: &[ConvParams]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(convs.len() as u32).to_le_bytes());
    for c in convs {
        for v in [c.out_ch, c.in_ch, 3, 3] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in c.weights.iter().chain(&c.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let b = self.take(n.checked_mul(4)?)?;
        Some(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a weight file holding the first `count` convs of the VGG-16 plan.
/// The extractor ends at the relu after the last stored conv.
pub(super) fn decode(bytes: &[u8]) -> Result<FeatureExtractor> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(Error::WeightFile("bad magic".into()));
    }
    match r.u32() {
        Some(VERSION) => {}
        Some(v) => return Err(Error::WeightFile(format!("unsupported version {v}"))),
        None => return Err(Error::WeightFile("truncated header".into())),
    }
    let count = r.u32().ok_or_else(|| Error::WeightFile("truncated header".into()))? as usize;
    let plan = vgg16_layers();
    let conv_layers: Vec<(usize, usize, usize)> = plan
        .iter()
        .enumerate()
        .filter_map(|(i, k)| match *k {
            LayerKind::Conv { in_ch, out_ch } => Some((i, in_ch, out_ch)),
            _ => None,
        })
        .collect();
    if count == 0 || count > conv_layers.len() {
        return Err(Error::WeightFile(format!(
            "conv count {count} outside 1..={}",
            conv_layers.len()
        )));
    }
    let mut convs = Vec::with_capacity(count);
    for &(layer, in_ch, out_ch) in &conv_layers[..count] {
        let truncated = || Error::Weights {
            layer,
            message: "file ends inside this layer".into(),
        };
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = r.u32().ok_or_else(truncated)? as usize;
        }
        if dims != [out_ch, in_ch, 3, 3] {
            return Err(Error::Weights {
                layer,
                message: format!(
                    "declared shape {}×{}×{}×{}, expected {}×{}×3×3",
                    dims[0], dims[1], dims[2], dims[3], out_ch, in_ch
                ),
            });
        }
        let weights = r.f32s(out_ch * in_ch * 9).ok_or_else(truncated)?;
        let bias = r.f32s(out_ch).ok_or_else(truncated)?;
        convs.push(ConvParams {
            out_ch,
            in_ch,
            weights,
            bias,
        });
    }
    if r.at != bytes.len() {
        let layer = conv_layers[count - 1].0;
        return Err(Error::Weights {
            layer,
            message: format!("{} unexpected trailing bytes after this layer", bytes.len() - r.at),
        });
    }
    let last = conv_layers[count - 1].0 + 1;
    FeatureExtractor::from_parts(plan[..=last].to_vec(), convs, Normalization::ImageNet)
}
