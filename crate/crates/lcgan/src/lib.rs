//! Cross-domain surgical-instrument segmentation via unpaired image
//! translation.
//!
//! The pipeline trains a segmentor on a labeled source domain, then learns a
//! bidirectional translator between source and target imagery with three
//! couplings: adversarial realism, multi-scale luminance correlation, and
//! segmentation consistency through cycle reconstruction. The translator
//! carries labeled source images into the target's appearance so the frozen
//! segmentor transfers without target labels.
//!
//! Numeric core is generic over the scalar type: training runs in `f32`,
//! gradient verification re-instantiates the same graphs in `f64`.

pub mod cli;
pub mod diff;
pub mod error;
pub mod image;
pub mod losses;
pub mod networks;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;

pub use diff::{GradCheckConfig, GradCheckReport, Tensor};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
