//! Super-resolution enhancement followed by two-stage object detection.
//!
//! The crate is organized as:
//! - [`tensor`] / [`tape`]: dense tensors and reverse-mode autodiff
//! - [`nn`]: parameter sets and layer helpers
//! - [`sr`]: super-resolution generator/discriminator and checkpoints
//! - [`train`]: losses, feature extractor, Adam, SR training loop
//! - [`det`]: anchors, RPN, proposals, RoI pooling, detection head
//! - [`metrics`]: detection matching, precision/recall/AP, PSNR, reports
//! - [`io`]: PPM codec, synthetic dataset, config, annotation rendering
//! - [`pipeline`]: end-to-end enhance-then-detect and the ablation harness

pub mod det;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sr;
pub mod tape;
pub mod train;
pub mod tensor;

#[cfg(test)]
mod test_util;

pub use error::{Error, Result};
pub use tensor::Tensor;
