//! Rectified linear activation.

use crate::tensor::Tensor;

/// Element-wise max(0, x). Any rank.
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes upstream gradient where the forward input was strictly positive.
/// The subgradient at exactly zero is taken to be zero.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> crate::Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(crate::Error::shape_mismatch(
            "relu upstream gradient",
            input.shape(),
            upstream.shape(),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &u)| if x > 0.0 { u } else { 0.0 })
        .collect();
    Tensor::new(upstream.shape(), data)
}
