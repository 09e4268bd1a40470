//! Max pooling and global average pooling.

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Square max pooling over an NCHW tensor.
///
/// Output extent per axis is floor((in - pool) / stride) + 1; trailing rows
/// and columns that do not fill a window are dropped. The second return
/// value records, for every output element, the flat index into the input
/// buffer of the maximum that produced it. Ties go to the first occurrence
/// in row-major scan order.
pub fn maxpool2d_forward(
    input: &Tensor,
    pool: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(input, 4, "maxpool input")?;
    if pool == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "maxpool size and stride must be >= 1".into(),
        ));
    }
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if pool > h || pool > w {
        return Err(Error::InvalidArgument(format!(
            "maxpool window {pool}x{pool} exceeds input {h}x{w}"
        )));
    }
    let out_h = (h - pool) / stride + 1;
    let out_w = (w - pool) / stride + 1;

    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let mut argmax = vec![0usize; n * c * out_h * out_w];
    let x = input.data();
    let o = out.data_mut();
    for bi in 0..n {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..pool {
                        let row = plane + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..pool {
                            let v = x[row + kx];
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    let oi = ((bi * c + ci) * out_h + oy) * out_w + ox;
                    o[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream element to the input position that won its window.
/// Overlapping windows accumulate.
pub fn maxpool2d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor,
) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::InvalidArgument(format!(
            "maxpool backward: upstream has {} elements but argmax has {}",
            upstream.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (src, &u) in argmax.iter().zip(upstream.data()) {
        g[*src] += u;
    }
    Ok(grad)
}

/// Mean over the spatial axes: (N, C, H, W) -> (N, C).
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    expect_rank(input, 4, "global average pool input")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let area = (h * w) as f64;
    let mut out = Tensor::zeros(&[n, c]);
    let x = input.data();
    let o = out.data_mut();
    for bi in 0..n {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            let mut acc = 0.0;
            for i in 0..h * w {
                acc += x[plane + i];
            }
            o[bi * c + ci] = acc / area;
        }
    }
    Ok(out)
}

/// Spreads each upstream element uniformly over the pooled plane.
pub fn global_avg_pool_backward(input_shape: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if input_shape.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "global average pool backward expects a rank-4 input shape, got {input_shape:?}"
        )));
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if upstream.shape() != [n, c] {
        return Err(Error::shape_mismatch(
            "global average pool upstream",
            &[n, c],
            upstream.shape(),
        ));
    }
    let area = (h * w) as f64;
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for bi in 0..n {
        for ci in 0..c {
            let share = upstream.at2(bi, ci) / area;
            let plane = (bi * c + ci) * h * w;
            for i in 0..h * w {
                g[plane + i] = share;
            }
        }
    }
    Ok(grad)
}
