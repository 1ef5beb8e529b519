//! Independent double-precision reference implementations used as test oracles.
//!
//! Nothing here shares code with the `objsplat` crate: inputs are plain
//! arrays, every formula is written out directly, and there is no tiling,
//! caching or early exit beyond what the rendering contract requires.

pub mod conv;
pub mod fd;
pub mod nnfm;
pub mod optim;
pub mod render;
pub mod stats;

pub use render::{RefCamera, RefGaussian, RefRenderSettings};
