//! Forward and backward kernels for the supported layer operations.
//!
//! Kernels are free functions over [`Tensor`](crate::Tensor)s: they validate
//! shapes, never mutate their inputs, and are single-threaded with a fixed
//! accumulation order so results are reproducible bit for bit.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormOutput, BatchNormTape};
pub use conv::{conv2d_backward, conv2d_forward};
pub(crate) use conv::conv_geometry;
pub use dense::{dense_backward, dense_forward};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use pool::{
    global_avg_pool_backward, global_avg_pool_forward, maxpool2d_backward, maxpool2d_forward,
};

use serde::{Deserialize, Serialize};

/// Spatial padding policy for convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding chosen so the output extent is ceil(input / stride).
    /// The total pad splits evenly, with the odd pixel on the bottom/right.
    Same,
    /// No padding; the kernel must fit inside the input.
    Valid,
}

/// Whether a forward pass uses batch statistics (training) or the stored
/// running statistics (inference). Only batch normalization distinguishes
/// the two, but the mode applies to a whole model pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub(crate) fn expect_rank(t: &crate::Tensor, rank: usize, what: &str) -> crate::Result<()> {
    if t.rank() != rank {
        return Err(crate::Error::InvalidArgument(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}
