//! 2-D convolution forward and backward.

use super::{expect_rank, Padding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: isize,
    pub pad_left: isize,
}

pub(crate) fn conv_geometry(
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
    }
    match padding {
        Padding::Same => {
            let out_h = in_h.div_ceil(stride);
            let out_w = in_w.div_ceil(stride);
            // Total pad so the last window still covers the input tail; the
            // extra pixel of an odd pad goes to the bottom/right edge.
            let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
            let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
            Ok(ConvGeometry {
                out_h,
                out_w,
                pad_top: (pad_h / 2) as isize,
                pad_left: (pad_w / 2) as isize,
            })
        }
        Padding::Valid => {
            if kh > in_h || kw > in_w {
                return Err(Error::InvalidArgument(format!(
                    "valid conv kernel {kh}x{kw} exceeds input {in_h}x{in_w}"
                )));
            }
            Ok(ConvGeometry {
                out_h: (in_h - kh) / stride + 1,
                out_w: (in_w - kw) / stride + 1,
                pad_top: 0,
                pad_left: 0,
            })
        }
    }
}

fn check_conv_args(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    expect_rank(input, 4, "conv input")?;
    expect_rank(weights, 4, "conv weights")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (f, wc, kh, kw) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    if wc != c {
        return Err(Error::shape_mismatch(
            "conv input channels vs weight channels",
            input.shape(),
            weights.shape(),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(Error::shape_mismatch("conv bias", &[f], b.shape()));
        }
    }
    Ok((n, c, h, w, f, kh, kw))
}

/// Cross-correlation of an NCHW input with FCHW filters.
///
/// Output shape is (N, F, out_h, out_w) where the spatial extents follow the
/// padding policy. Padded positions contribute zero.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (n, c, h, w, f, kh, kw) = check_conv_args(input, weights, bias)?;
    let g = conv_geometry(h, w, kh, kw, stride, padding)?;

    let mut out = Tensor::zeros(&[n, f, g.out_h, g.out_w]);
    let x = input.data();
    let wt = weights.data();
    let o = out.data_mut();
    for bi in 0..n {
        for fi in 0..f {
            let b = bias.map_or(0.0, |b| b.data()[fi]);
            for oy in 0..g.out_h {
                let iy0 = (oy * stride) as isize - g.pad_top;
                for ox in 0..g.out_w {
                    let ix0 = (ox * stride) as isize - g.pad_left;
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let sy = iy0 + ky as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let xrow = ((bi * c + ci) * h + sy as usize) * w;
                            let wrow = ((fi * c + ci) * kh + ky) * kw;
                            for kx in 0..kw {
                                let sx = ix0 + kx as isize;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += x[xrow + sx as usize] * wt[wrow + kx];
                            }
                        }
                    }
                    o[((bi * f + fi) * g.out_h + oy) * g.out_w + ox] = acc + b;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv2d call with respect to input, weights, and bias.
///
/// `upstream` must match the forward output shape. The bias gradient is
/// always produced; callers of bias-free convolutions drop it.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: Padding,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w, f, kh, kw) = check_conv_args(input, weights, None)?;
    let g = conv_geometry(h, w, kh, kw, stride, padding)?;
    let expect = [n, f, g.out_h, g.out_w];
    if upstream.shape() != expect {
        return Err(Error::shape_mismatch(
            "conv upstream gradient",
            &expect,
            upstream.shape(),
        ));
    }

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut grad_bias = Tensor::zeros(&[f]);
    let x = input.data();
    let wt = weights.data();
    let up = upstream.data();
    let gi = grad_input.data_mut();
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();

    for bi in 0..n {
        for fi in 0..f {
            for oy in 0..g.out_h {
                let iy0 = (oy * stride) as isize - g.pad_top;
                for ox in 0..g.out_w {
                    let ix0 = (ox * stride) as isize - g.pad_left;
                    let u = up[((bi * f + fi) * g.out_h + oy) * g.out_w + ox];
                    gb[fi] += u;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let sy = iy0 + ky as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let xrow = ((bi * c + ci) * h + sy as usize) * w;
                            let wrow = ((fi * c + ci) * kh + ky) * kw;
                            for kx in 0..kw {
                                let sx = ix0 + kx as isize;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                gi[xrow + sx as usize] += u * wt[wrow + kx];
                                gw[wrow + kx] += u * x[xrow + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}
