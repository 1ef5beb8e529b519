//! Gaussian primitives: parameters, covariance, projection and SH color.

pub mod camera;
pub mod covariance;
pub mod gaussians;
pub mod linalg;
pub mod projection;
pub mod sh;

pub use camera::Camera;
pub use covariance::{build_covariance, build_covariance_backward, rotation_matrix};
pub use gaussians::{GaussianSet, IdFeature, ID_FEATURE_DIM};
pub use projection::{
    project_gaussian, project_gaussian_backward, CullReason, ProjectedGaussian,
    DEFAULT_NEAR_PLANE, LOW_PASS,
};
pub use sh::{eval_sh, eval_sh_backward, ShGrad};
