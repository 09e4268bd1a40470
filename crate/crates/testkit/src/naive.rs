//! Straight-line reference kernels.
//!
//! Each routine materializes intermediate buffers and walks every index with
//! plain nested loops. They are slow on purpose: their only job is to be
//! obviously correct so the optimized kernels can be diffed against them.

use mdgc_core::Tensor;

/// Output size and leading pad for one spatial axis.
///
/// "Same" padding produces ceil(in / stride) outputs with the total pad
/// split evenly and the odd pixel going to the trailing edge; "valid" uses
/// no padding and drops partial windows.
fn axis_geometry(in_len: usize, k: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = in_len.div_ceil(stride);
        let needed = (out - 1) * stride + k;
        let pad_total = needed.saturating_sub(in_len);
        (out, pad_total / 2)
    } else {
        ((in_len - k) / stride + 1, 0)
    }
}

/// Reference 2-D convolution over NCHW input with FCHW weights.
/// Zero-pads into an explicit buffer, then convolves directly.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    same: bool,
) -> Tensor {
    let (n, c, h, w) = shape4(input);
    let (f, wc, kh, kw) = shape4(weights);
    assert_eq!(c, wc, "channel mismatch in reference conv");
    let (out_h, pad_top) = axis_geometry(h, kh, stride, same);
    let (out_w, pad_left) = axis_geometry(w, kw, stride, same);

    // Explicit zero-padded copy of the input.
    let pad_h = if same { ((out_h - 1) * stride + kh).max(h) } else { h };
    let pad_w = if same { ((out_w - 1) * stride + kw).max(w) } else { w };
    let mut padded = vec![0.0f64; n * c * pad_h * pad_w];
    for bi in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let dst = ((bi * c + ci) * pad_h + y + pad_top) * pad_w + x + pad_left;
                    padded[dst] = input.at4(bi, ci, y, x);
                }
            }
        }
    }

    let mut out = vec![0.0f64; n * f * out_h * out_w];
    for bi in 0..n {
        for fi in 0..f {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = oy * stride + ky;
                                let sx = ox * stride + kx;
                                let src = ((bi * c + ci) * pad_h + sy) * pad_w + sx;
                                acc += padded[src] * weights.at4(fi, ci, ky, kx);
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b.data()[fi];
                    }
                    out[((bi * f + fi) * out_h + oy) * out_w + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, f, out_h, out_w], out).unwrap()
}

/// Reference max pooling; partial windows are dropped.
pub fn maxpool2d(input: &Tensor, pool: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = shape4(input);
    let out_h = (h - pool) / stride + 1;
    let out_w = (w - pool) / stride + 1;
    let mut out = vec![0.0f64; n * c * out_h * out_w];
    for bi in 0..n {
        for ci in 0..c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..pool {
                        for kx in 0..pool {
                            let v = input.at4(bi, ci, oy * stride + ky, ox * stride + kx);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((bi * c + ci) * out_h + oy) * out_w + ox] = best;
                }
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out).unwrap()
}

/// Reference global average pooling: (N, C, H, W) -> (N, C).
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let (n, c, h, w) = shape4(input);
    let mut out = vec![0.0f64; n * c];
    for bi in 0..n {
        for ci in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += input.at4(bi, ci, y, x);
                }
            }
            out[bi * c + ci] = acc / (h * w) as f64;
        }
    }
    Tensor::new(&[n, c], out).unwrap()
}

/// Reference fully-connected layer: (N, D) x (D, M) + (M,).
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let n = input.shape()[0];
    let d = input.shape()[1];
    let m = weights.shape()[1];
    assert_eq!(weights.shape()[0], d);
    let mut out = vec![0.0f64; n * m];
    for bi in 0..n {
        for mi in 0..m {
            let mut acc = bias.data()[mi];
            for di in 0..d {
                acc += input.at2(bi, di) * weights.at2(di, mi);
            }
            out[bi * m + mi] = acc;
        }
    }
    Tensor::new(&[n, m], out).unwrap()
}

fn shape4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "reference kernel expects rank-4 tensor");
    (s[0], s[1], s[2], s[3])
}
