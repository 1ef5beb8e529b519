pub mod classifier;
pub mod error;
pub mod featnet;
pub mod knn;
pub mod raster;
pub mod rgb;
pub mod sceneio;
pub mod segsel;
pub mod splat;
pub mod styler;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
