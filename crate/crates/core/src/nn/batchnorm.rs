//! Batch normalization over the channel axis of NCHW tensors.

use super::{expect_rank, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything a batchnorm forward pass produces.
#[derive(Debug)]
pub struct BatchNormOutput {
    pub output: Tensor,
    pub tape: BatchNormTape,
    /// Training mode only: (running_mean, running_var) after folding in this
    /// batch. The caller decides when to commit them; the kernel never
    /// mutates shared state.
    pub updated_running: Option<(Tensor, Tensor)>,
}

/// Cached values for the backward pass. The normalized activations and the
/// per-channel inverse standard deviation suffice for both modes; the mode
/// decides whether the statistics were functions of the input.
#[derive(Debug)]
pub enum BatchNormTape {
    Train { x_hat: Tensor, inv_std: Vec<f64> },
    Infer { x_hat: Tensor, inv_std: Vec<f64> },
}

fn check_stats_vector(t: &Tensor, channels: usize, what: &str) -> Result<()> {
    if t.shape() != [channels] {
        return Err(Error::shape_mismatch(what, &[channels], t.shape()));
    }
    Ok(())
}

/// Normalizes each channel to zero mean and unit variance, then applies the
/// learned affine transform gamma * x_hat + beta.
///
/// Training mode uses biased batch statistics over the (N, H, W) axes and
/// reports updated running statistics as
/// `running <- momentum * running + (1 - momentum) * batch`.
/// Inference mode normalizes with the stored running statistics.
// The four statistics vectors are genuinely separate inputs; bundling them
// into a struct would only move the argument list one level down.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<BatchNormOutput> {
    expect_rank(input, 4, "batchnorm input")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    check_stats_vector(gamma, c, "batchnorm gamma")?;
    check_stats_vector(beta, c, "batchnorm beta")?;
    check_stats_vector(running_mean, c, "batchnorm running mean")?;
    check_stats_vector(running_var, c, "batchnorm running variance")?;
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm eps must be positive and finite, got {eps}"
        )));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "batchnorm momentum must be in [0, 1], got {momentum}"
        )));
    }
    if let Some(ci) = running_var.data().iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "batchnorm running variance must be positive, got {} at channel {ci}",
            running_var.data()[ci]
        )));
    }

    let plane = h * w;
    let m = (n * plane) as f64;
    let x = input.data();

    // Per-channel mean and variance for this pass.
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut acc = 0.0;
                for bi in 0..n {
                    let base = (bi * c + ci) * plane;
                    for i in 0..plane {
                        acc += x[base + i];
                    }
                }
                mean[ci] = acc / m;
                let mut sq = 0.0;
                for bi in 0..n {
                    let base = (bi * c + ci) * plane;
                    for i in 0..plane {
                        let d = x[base + i] - mean[ci];
                        sq += d * d;
                    }
                }
                var[ci] = sq / m;
            }
            (mean, var)
        }
        Mode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let mut x_hat = Tensor::zeros(input.shape());
    let mut output = Tensor::zeros(input.shape());
    {
        let xh = x_hat.data_mut();
        let o = output.data_mut();
        for bi in 0..n {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let (mu, istd) = (mean[ci], inv_std[ci]);
                let (g, b) = (gamma.data()[ci], beta.data()[ci]);
                for i in 0..plane {
                    let nh = (x[base + i] - mu) * istd;
                    xh[base + i] = nh;
                    o[base + i] = g * nh + b;
                }
            }
        }
    }

    let (tape, updated_running) = match mode {
        Mode::Train => {
            let mut new_mean = Tensor::zeros(&[c]);
            let mut new_var = Tensor::zeros(&[c]);
            for ci in 0..c {
                new_mean.data_mut()[ci] =
                    momentum * running_mean.data()[ci] + (1.0 - momentum) * mean[ci];
                new_var.data_mut()[ci] =
                    momentum * running_var.data()[ci] + (1.0 - momentum) * var[ci];
            }
            (
                BatchNormTape::Train { x_hat, inv_std },
                Some((new_mean, new_var)),
            )
        }
        Mode::Infer => (BatchNormTape::Infer { x_hat, inv_std }, None),
    };
    Ok(BatchNormOutput {
        output,
        tape,
        updated_running,
    })
}

/// Gradients with respect to input, gamma, and beta.
///
/// In training mode the batch statistics are functions of the input, so the
/// input gradient carries the correction terms; in inference mode the
/// statistics are constants and the gradient is a plain per-channel scale.
pub fn batchnorm_backward(
    tape: &BatchNormTape,
    gamma: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (x_hat, inv_std, train) = match tape {
        BatchNormTape::Train { x_hat, inv_std } => (x_hat, inv_std, true),
        BatchNormTape::Infer { x_hat, inv_std } => (x_hat, inv_std, false),
    };
    if upstream.shape() != x_hat.shape() {
        return Err(Error::shape_mismatch(
            "batchnorm upstream gradient",
            x_hat.shape(),
            upstream.shape(),
        ));
    }
    let (n, c, h, w) = (
        x_hat.shape()[0],
        x_hat.shape()[1],
        x_hat.shape()[2],
        x_hat.shape()[3],
    );
    check_stats_vector(gamma, c, "batchnorm gamma")?;

    let plane = h * w;
    let m = (n * plane) as f64;
    let xh = x_hat.data();
    let up = upstream.data();

    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mut dg = 0.0;
        let mut db = 0.0;
        for bi in 0..n {
            let base = (bi * c + ci) * plane;
            for i in 0..plane {
                dg += up[base + i] * xh[base + i];
                db += up[base + i];
            }
        }
        grad_gamma.data_mut()[ci] = dg;
        grad_beta.data_mut()[ci] = db;
    }

    let mut grad_input = Tensor::zeros(x_hat.shape());
    let gi = grad_input.data_mut();
    for (ci, &istd) in inv_std.iter().enumerate() {
        let scale = gamma.data()[ci] * istd;
        if train {
            let mean_dy = grad_beta.data()[ci] / m;
            let mean_dy_xhat = grad_gamma.data()[ci] / m;
            for bi in 0..n {
                let base = (bi * c + ci) * plane;
                for i in 0..plane {
                    gi[base + i] =
                        scale * (up[base + i] - mean_dy - xh[base + i] * mean_dy_xhat);
                }
            }
        } else {
            for bi in 0..n {
                let base = (bi * c + ci) * plane;
                for i in 0..plane {
                    gi[base + i] = scale * up[base + i];
                }
            }
        }
    }
    Ok((grad_input, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-5;

    fn unit_stats(c: usize) -> (Tensor, Tensor, Tensor, Tensor) {
        (
            Tensor::filled(&[c], 1.0),
            Tensor::zeros(&[c]),
            Tensor::zeros(&[c]),
            Tensor::filled(&[c], 1.0),
        )
    }

    #[test]
    fn already_normalized_batch_passes_through() {
        // Batch statistics: mean 0 and biased variance 1 - eps, so that
        // var + eps is exactly 1 and normalization is the identity.
        let v = (1.0 - EPS).sqrt();
        let input = Tensor::new(&[2, 1, 1, 2], vec![v, -v, -v, v]).unwrap();
        let (gamma, beta, rm, rv) = unit_stats(1);
        let out = batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Train, EPS, 0.9)
            .unwrap()
            .output;
        for (a, b) in out.data().iter().zip(input.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn mean_zero_var_one_batch_is_close_to_identity() {
        let input = Tensor::new(&[2, 1, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let (gamma, beta, rm, rv) = unit_stats(1);
        let out = batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Train, EPS, 0.9)
            .unwrap()
            .output;
        for (a, b) in out.data().iter().zip(input.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gamma_yields_constant_beta() {
        let input = Tensor::new(&[1, 2, 1, 2], vec![3.0, -1.0, 4.0, 1.5]).unwrap();
        let gamma = Tensor::zeros(&[2]);
        let beta = Tensor::new(&[2], vec![0.25, -0.75]).unwrap();
        let rm = Tensor::zeros(&[2]);
        let rv = Tensor::filled(&[2], 1.0);
        let out = batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Train, EPS, 0.9)
            .unwrap()
            .output;
        assert_eq!(out.data(), &[0.25, 0.25, -0.75, -0.75]);
    }

    #[test]
    fn train_mode_output_has_unit_moments() {
        let input = Tensor::new(
            &[2, 1, 2, 2],
            vec![5.0, 7.0, 11.0, -3.0, 2.0, 0.5, -4.0, 9.0],
        )
        .unwrap();
        let (gamma, beta, rm, rv) = unit_stats(1);
        let out = batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Train, EPS, 0.9)
            .unwrap()
            .output;
        let m = out.data().iter().sum::<f64>() / 8.0;
        let v = out.data().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-12, "mean {m}");
        assert!((v - 1.0).abs() < 2.0 * EPS, "variance {v}");
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let input = Tensor::new(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let (gamma, beta, _, _) = unit_stats(1);
        let rm = Tensor::filled(&[1], 1.0);
        let rv = Tensor::filled(&[1], 2.0);
        let result =
            batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Train, EPS, 0.9).unwrap();
        let (new_mean, new_var) = result.updated_running.unwrap();
        // Batch mean 3, biased batch variance 1.
        assert!((new_mean.data()[0] - (0.9 * 1.0 + 0.1 * 3.0)).abs() < 1e-12);
        assert!((new_var.data()[0] - (0.9 * 2.0 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_uses_running_stats_and_reports_no_update() {
        let input = Tensor::new(&[1, 1, 1, 2], vec![3.0, 5.0]).unwrap();
        let (gamma, beta, _, _) = unit_stats(1);
        let rm = Tensor::filled(&[1], 3.0);
        let rv = Tensor::filled(&[1], 4.0);
        let result =
            batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Infer, EPS, 0.9).unwrap();
        assert!(result.updated_running.is_none());
        let istd = 1.0 / (4.0f64 + EPS).sqrt();
        assert!((result.output.data()[0] - 0.0).abs() < 1e-12);
        assert!((result.output.data()[1] - 2.0 * istd).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_running_variance_is_rejected() {
        let input = Tensor::zeros(&[1, 1, 1, 2]);
        let (gamma, beta, rm, _) = unit_stats(1);
        let rv = Tensor::zeros(&[1]);
        let err = batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Infer, EPS, 0.9)
            .unwrap_err();
        assert!(err.to_string().contains("running variance"));
    }

    #[test]
    fn infer_backward_is_a_per_channel_scale() {
        let input = Tensor::new(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let gamma = Tensor::filled(&[1], 2.0);
        let beta = Tensor::zeros(&[1]);
        let rm = Tensor::zeros(&[1]);
        let rv = Tensor::filled(&[1], 1.0);
        let result =
            batchnorm_forward(&input, &gamma, &beta, &rm, &rv, Mode::Infer, EPS, 0.9).unwrap();
        let up = Tensor::filled(&[1, 1, 1, 3], 1.0);
        let (gi, _, gb) = batchnorm_backward(&result.tape, &gamma, &up).unwrap();
        let expect = 2.0 / (1.0f64 + EPS).sqrt();
        for g in gi.data() {
            assert!((g - expect).abs() < 1e-12);
        }
        assert_eq!(gb.data(), &[3.0]);
    }
}
