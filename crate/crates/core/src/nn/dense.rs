//! Fully-connected layer.

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// x . W + b for row-major x of shape (N, D), W of shape (D, M), b of (M,).
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(input, 2, "dense input")?;
    expect_rank(weights, 2, "dense weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    if weights.shape()[0] != d {
        return Err(Error::shape_mismatch(
            "dense input width vs weight rows",
            input.shape(),
            weights.shape(),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::shape_mismatch("dense bias", &[m], bias.shape()));
    }

    let mut out = Tensor::zeros(&[n, m]);
    let x = input.data();
    let wt = weights.data();
    let o = out.data_mut();
    for bi in 0..n {
        for mi in 0..m {
            let mut acc = bias.data()[mi];
            for di in 0..d {
                acc += x[bi * d + di] * wt[di * m + mi];
            }
            o[bi * m + mi] = acc;
        }
    }
    Ok(out)
}

/// Gradients with respect to input, weights, and bias.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    expect_rank(input, 2, "dense input")?;
    expect_rank(weights, 2, "dense weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    if weights.shape()[0] != d {
        return Err(Error::shape_mismatch(
            "dense input width vs weight rows",
            input.shape(),
            weights.shape(),
        ));
    }
    if upstream.shape() != [n, m] {
        return Err(Error::shape_mismatch(
            "dense upstream gradient",
            &[n, m],
            upstream.shape(),
        ));
    }

    let mut grad_input = Tensor::zeros(&[n, d]);
    let mut grad_weights = Tensor::zeros(&[d, m]);
    let mut grad_bias = Tensor::zeros(&[m]);
    let x = input.data();
    let wt = weights.data();
    let up = upstream.data();
    {
        let gi = grad_input.data_mut();
        for bi in 0..n {
            for di in 0..d {
                let mut acc = 0.0;
                for mi in 0..m {
                    acc += up[bi * m + mi] * wt[di * m + mi];
                }
                gi[bi * d + di] = acc;
            }
        }
    }
    {
        let gw = grad_weights.data_mut();
        for di in 0..d {
            for mi in 0..m {
                let mut acc = 0.0;
                for bi in 0..n {
                    acc += x[bi * d + di] * up[bi * m + mi];
                }
                gw[di * m + mi] = acc;
            }
        }
    }
    {
        let gb = grad_bias.data_mut();
        for mi in 0..m {
            let mut acc = 0.0;
            for bi in 0..n {
                acc += up[bi * m + mi];
            }
            gb[mi] = acc;
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}
