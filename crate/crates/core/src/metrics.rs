//! Binary classification metrics and evaluation reports.
//!
//! The disease class is the positive class for the confusion matrix.
//! Per-class precision, sensitivity, and F1 are reported for both classes
//! (the healthy scores come from the transposed matrix); any score whose
//! denominator is zero is defined as 0.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;

/// Prediction counts with macular degeneration as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::MacularDegeneration, Label::MacularDegeneration) => self.tp += 1,
            (Label::Healthy, Label::Healthy) => self.tn += 1,
            (Label::Healthy, Label::MacularDegeneration) => self.fp += 1,
            (Label::MacularDegeneration, Label::Healthy) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, sensitivity (recall), and F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
}

/// Scores for `label`, treating it as the positive class.
pub fn class_scores(cm: &ConfusionMatrix, label: Label) -> ClassScores {
    // For the healthy class the matrix transposes: its true positives are
    // the healthy images predicted healthy.
    let (tp, fp, fn_) = match label {
        Label::MacularDegeneration => (cm.tp, cm.fp, cm.fn_),
        Label::Healthy => (cm.tn, cm.fn_, cm.fp),
    };
    let precision = ratio(tp, tp + fp);
    let sensitivity = ratio(tp, tp + fn_);
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    ClassScores {
        precision,
        sensitivity,
        f1,
    }
}

/// How the evaluated split was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train_ratio: f64,
    pub seed: u64,
}

/// Scores for both classes, keyed by label name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassScores {
    pub healthy: ClassScores,
    pub macular_degeneration: ClassScores,
}

/// Full evaluation report; serializes to the stable JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub split: SplitInfo,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: PerClassScores,
}

/// Assembles the report for one evaluation.
pub fn build_report(model: &str, split: SplitInfo, cm: &ConfusionMatrix) -> MetricsReport {
    MetricsReport {
        model: model.to_string(),
        split,
        accuracy: cm.accuracy(),
        confusion: *cm,
        per_class: PerClassScores {
            healthy: class_scores(cm, Label::Healthy),
            macular_degeneration: class_scores(cm, Label::MacularDegeneration),
        },
    }
}

/// Human-readable table with three decimal places.
pub fn render_table(report: &MetricsReport) -> String {
    let cm = &report.confusion;
    let mut out = String::new();
    out.push_str(&format!("model: {}\n", report.model));
    out.push_str(&format!(
        "split: train_ratio {} seed {}\n",
        report.split.train_ratio, report.split.seed
    ));
    out.push_str(&format!("accuracy: {:.3}\n", report.accuracy));
    out.push_str(&format!(
        "confusion: tp {}  tn {}  fp {}  fn {}\n",
        cm.tp, cm.tn, cm.fp, cm.fn_
    ));
    out.push_str(&format!(
        "{:<22}{:>10}{:>13}{:>8}\n",
        "class", "precision", "sensitivity", "f1"
    ));
    for label in Label::all() {
        let s = match label {
            Label::Healthy => report.per_class.healthy,
            Label::MacularDegeneration => report.per_class.macular_degeneration,
        };
        out.push_str(&format!(
            "{:<22}{:>10.3}{:>13.3}{:>8.3}\n",
            label.as_str(),
            s.precision,
            s.sensitivity,
            s.f1
        ));
    }
    out
}
