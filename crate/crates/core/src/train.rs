//! Training loop, Adam optimizer, and evaluation.
//!
//! Determinism contract: one master PRNG is seeded from the run seed; each
//! epoch draws a shuffle seed and an augmentation base from it, in that
//! order. Every image gets its own augmentation stream seeded with
//! `base ^ record_index`, so results do not depend on batch boundaries or
//! visit order. Evaluation never augments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, ManifestRecord};
use crate::error::{Error, Result};
use crate::image::{load_ppm, Image};
use crate::metrics::ConfusionMatrix;
use crate::model::{Backprop, Model, TapeRequest};
use crate::nn::{softmax_cross_entropy, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::transform::{augment, to_tensor, AugmentPolicy};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub augment: AugmentPolicy,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and positive, got {}",
                self.lr
            )));
        }
        self.augment.validate()
    }
}

/// Adam with bias correction. Moment buffers align with the model's
/// trainable tensors in visitation order.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Adam {
        let shapes: Vec<Vec<usize>> = model
            .named_tensors()
            .into_iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| t.shape().to_vec())
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Applies one update from a full backward pass.
    pub fn step(&mut self, model: &mut Model, back: &Backprop) -> Result<()> {
        let grads: Vec<&Tensor> = back.param_grads.iter().flatten().collect();
        if grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer holds {} moment buffers but received {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let correction1 = 1.0 - self.beta1.powi(self.step as i32);
        let correction2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut slot = 0;
        let mut error = None;
        model.visit_tensors_mut(&mut |name, tensor, trainable| {
            if !trainable || error.is_some() {
                return;
            }
            let grad = grads[slot];
            if grad.shape() != tensor.shape() {
                error = Some(Error::shape_mismatch(
                    &format!("gradient for {name}"),
                    tensor.shape(),
                    grad.shape(),
                ));
                return;
            }
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let theta = tensor.data_mut();
            for ((t, g), (m, v)) in theta
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *t -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            slot += 1;
        });
        match error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Loss and accuracy over one epoch's training batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Example-weighted mean cross-entropy.
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Per-epoch statistics for a whole run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

/// Loads one image and insists it already has the model's input size.
fn load_image_checked(root: &Path, record: &ManifestRecord, h: usize, w: usize) -> Result<Image> {
    let path = root.join(&record.path);
    let image = load_ppm(&path)?;
    if image.width() != w || image.height() != h {
        return Err(Error::InvalidArgument(format!(
            "{}: expected a {w}x{h} image, got {}x{}; run the preprocess step first",
            path.display(),
            image.width(),
            image.height()
        )));
    }
    Ok(image)
}

/// Index of the row maximum; earlier class wins ties.
pub fn argmax_row(logits: &Tensor, row: usize) -> usize {
    let classes = logits.shape()[1];
    let mut best = 0;
    for c in 1..classes {
        if logits.at2(row, c) > logits.at2(row, best) {
            best = c;
        }
    }
    best
}

/// Trains `model` in place on `records` (paths relative to `root`).
/// Calls `progress` after each epoch. Non-finite loss aborts with a
/// numeric error.
pub fn train(
    model: &mut Model,
    records: &[ManifestRecord],
    root: &Path,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainLog> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "training requires at least one record".into(),
        ));
    }
    let (_, h, w) = model.config().input;
    let images: Vec<Image> = records
        .iter()
        .map(|r| load_image_checked(root, r, h, w))
        .collect::<Result<_>>()?;

    let mut master = Rng::new(cfg.seed);
    let mut optimizer = Adam::new(model, cfg.lr);
    let mut log = TrainLog { epochs: Vec::new() };

    for epoch in 1..=cfg.epochs {
        let shuffle_seed = master.next_u64();
        let augment_base = master.next_u64();
        let mut order: Vec<usize> = (0..records.len()).collect();
        Rng::new(shuffle_seed).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut samples = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let mut image_rng = Rng::new(augment_base ^ idx as u64);
                let augmented = augment(&images[idx], &cfg.augment, &mut image_rng);
                samples.push(to_tensor(&augmented));
                labels.push(records[idx].label.index());
            }
            let batch = Tensor::stack(&samples)?;
            let pass = model.forward_training(&batch, TapeRequest::Full)?;
            let (loss, grad) = softmax_cross_entropy(&pass.output, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {epoch}; training diverged"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            for (row, &label) in labels.iter().enumerate() {
                if argmax_row(&pass.output, row) == label {
                    correct += 1;
                }
            }
            let tape = pass.tape.as_ref().expect("full tape requested");
            let back = model.backward(tape, &grad)?;
            optimizer.step(model, &back)?;
        }

        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / records.len() as f64,
            accuracy: correct as f64 / records.len() as f64,
        };
        progress(&stats);
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Evaluates without augmentation, returning the confusion matrix.
/// Logit ties predict the healthy class.
pub fn evaluate(model: &Model, records: &[ManifestRecord], root: &Path) -> Result<ConfusionMatrix> {
    let (_, h, w) = model.config().input;
    let mut cm = ConfusionMatrix::new();
    for chunk in records.chunks(DEFAULT_BATCH_SIZE) {
        let mut samples = Vec::with_capacity(chunk.len());
        for record in chunk {
            samples.push(to_tensor(&load_image_checked(root, record, h, w)?));
        }
        let batch = Tensor::stack(&samples)?;
        let pass = model.forward(&batch, Mode::Infer, TapeRequest::None, None)?;
        for (row, record) in chunk.iter().enumerate() {
            let predicted = Label::from_index(argmax_row(&pass.output, row))?;
            cm.record(record.label, predicted);
        }
    }
    Ok(cm)
}
