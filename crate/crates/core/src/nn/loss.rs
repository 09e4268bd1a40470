//! Softmax cross-entropy, fused with its gradient.

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax probabilities, stabilized by max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    expect_rank(logits, 2, "softmax logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(&[n, k]);
    let x = logits.data();
    let o = out.data_mut();
    for bi in 0..n {
        let row = &x[bi * k..(bi + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for ki in 0..k {
            let e = (row[ki] - mx).exp();
            o[bi * k + ki] = e;
            sum += e;
        }
        for ki in 0..k {
            o[bi * k + ki] /= sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of softmax(logits) against integer labels, plus the
/// gradient with respect to the logits: (softmax - onehot) / N.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    expect_rank(logits, 2, "softmax logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} labels for a batch of {n}, got {}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }

    let mut grad = softmax_rows(logits)?;
    let x = logits.data();
    let mut loss = 0.0;
    {
        let gd = grad.data_mut();
        for bi in 0..n {
            let row = &x[bi * k..(bi + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum: f64 = row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            loss -= row[labels[bi]] - mx - log_sum;
            gd[bi * k + labels[bi]] -= 1.0;
        }
        for v in gd.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
