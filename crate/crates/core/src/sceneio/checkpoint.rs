//! Single-file little-endian checkpoint ("SSPL").

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::splat::sh::{coeff_count, MAX_DEGREE};
use crate::splat::{GaussianSet, ID_FEATURE_DIM};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSPL";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;
const META_LEN: usize = 3 * 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iterations: u64,
    pub seed: u64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub gaussians: GaussianSet,
    pub classifier: Classifier,
    pub meta: CheckpointMeta,
}

/// Element counts of the eight arrays, in file order.
fn array_lengths(n: usize, sh_degree: usize, num_classes: usize) -> [usize; 8] {
    [
        3 * n,
        4 * n,
        3 * n,
        n,
        coeff_count(sh_degree) * n,
        ID_FEATURE_DIM * n,
        num_classes * ID_FEATURE_DIM,
        num_classes,
    ]
}

/// Total file size for a checkpoint with these dimensions.
pub fn checkpoint_len(n: usize, sh_degree: usize, num_classes: usize) -> usize {
    HEADER_LEN + array_lengths(n, sh_degree, num_classes).iter().map(|l| 8 + 4 * l).sum::<usize>() + META_LEN
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let g = &ckpt.gaussians;
    g.validate()?;
    let c = &ckpt.classifier;
    if c.weights.len() != c.num_classes * ID_FEATURE_DIM || c.bias.len() != c.num_classes {
        return Err(Error::invalid("classifier arrays do not match num_classes"));
    }
    let mut out = Vec::with_capacity(checkpoint_len(g.len(), g.sh_degree, c.num_classes));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.len() as u64).to_le_bytes());
    out.extend_from_slice(&(g.sh_degree as u32).to_le_bytes());
    out.extend_from_slice(&(c.num_classes as u32).to_le_bytes());
    let arrays: [&[f32]; 8] = [
        g.positions.as_flattened(),
        g.rotations.as_flattened(),
        g.log_scales.as_flattened(),
        &g.opacity_logits,
        &g.sh_coeffs,
        g.id_features.as_flattened(),
        &c.weights,
        &c.bias,
    ];
    for a in arrays {
        out.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in [ckpt.meta.iterations, ckpt.meta.seed, ckpt.meta.config_hash] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> &[u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f32s(&mut self, name: &str, expected: usize) -> Result<Vec<f32>> {
        let count = self.u64();
        if count != expected as u64 {
            return Err(Error::Checkpoint(format!("{name}: {count} values, expected {expected}")));
        }
        Ok(self
            .take(4 * expected)
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

fn chunked<const K: usize>(v: Vec<f32>) -> Vec<[f32; K]> {
    v.chunks_exact(K).map(|c| c.try_into().unwrap()).collect()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint: expected magic \"SSPL\" (version {CHECKPOINT_VERSION})"
        )));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32();
    if version > CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {version} is newer than the supported version {CHECKPOINT_VERSION}"
        )));
    }
    if version == 0 {
        return Err(Error::Checkpoint("version 0 is not a valid checkpoint version".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!(
            "truncated: expected at least {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let n = r.u64();
    let sh_degree = r.u32() as usize;
    let num_classes = r.u32() as usize;
    if sh_degree > MAX_DEGREE {
        return Err(Error::Checkpoint(format!("SH degree {sh_degree} exceeds {MAX_DEGREE}")));
    }
    let n = usize::try_from(n)
        .ok()
        .filter(|&n| n <= bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("truncated: header claims {n} Gaussians in {} bytes", bytes.len())))?;
    let expected = checkpoint_len(n, sh_degree, num_classes);
    if bytes.len() != expected {
        let what = if bytes.len() < expected { "truncated" } else { "trailing data" };
        return Err(Error::Checkpoint(format!(
            "{what}: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let lens = array_lengths(n, sh_degree, num_classes);
    let positions = chunked::<3>(r.f32s("positions", lens[0])?);
    let rotations = chunked::<4>(r.f32s("rotations", lens[1])?);
    let log_scales = chunked::<3>(r.f32s("log_scales", lens[2])?);
    let opacity_logits = r.f32s("opacity_logits", lens[3])?;
    let sh_coeffs = r.f32s("sh_coeffs", lens[4])?;
    let id_features = chunked::<ID_FEATURE_DIM>(r.f32s("id_features", lens[5])?);
    let weights = r.f32s("classifier weights", lens[6])?;
    let bias = r.f32s("classifier bias", lens[7])?;
    let meta = CheckpointMeta {
        iterations: r.u64(),
        seed: r.u64(),
        config_hash: r.u64(),
    };
    Ok(Checkpoint {
        gaussians: GaussianSet {
            sh_degree,
            positions,
            rotations,
            log_scales,
            opacity_logits,
            sh_coeffs,
            id_features,
        },
        classifier: Classifier { num_classes, weights, bias },
        meta,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
