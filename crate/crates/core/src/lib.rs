//! Training, evaluation, and Grad-CAM inspection of small convolutional
//! classifiers for two-class fundus images, built on dense f64 tensors with
//! hand-written forward/backward kernels.
//!
//! Everything is deterministic: one splitmix64 generator drives weight
//! initialization, dataset shuffling, and augmentation, and every kernel is
//! single-threaded with a fixed accumulation order, so a given seed produces
//! bit-identical models and artifacts on every run.

pub mod dataset;
pub mod error;
pub mod gradcam;
pub mod gradcheck;
pub mod image;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod residual;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod transform;
pub mod zoo;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
