//! Brute-force binary classification metrics.
//!
//! Everything is recomputed by iterating over (label, prediction) pairs and
//! counting, with no shared arithmetic with the production metrics module.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveScores {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
    /// Index 0: healthy treated as the positive class; index 1: disease.
    pub per_class: [NaiveScores; 2],
}

/// Recomputes every metric by direct counting. Class 1 is the disease
/// (positive) class for the confusion counts; per-class scores treat each
/// class as positive in turn. Any zero denominator yields 0.
pub fn metrics_from_pairs(pairs: &[(usize, usize)]) -> NaiveMetrics {
    let count = |want_label: usize, want_pred: usize| {
        pairs
            .iter()
            .filter(|(l, p)| *l == want_label && *p == want_pred)
            .count()
    };
    let tp = count(1, 1);
    let tn = count(0, 0);
    let fp = count(0, 1);
    let fn_ = count(1, 0);

    let total = pairs.len();
    let accuracy = if total == 0 {
        0.0
    } else {
        (tp + tn) as f64 / total as f64
    };

    let mut per_class = [NaiveScores {
        precision: 0.0,
        sensitivity: 0.0,
        f1: 0.0,
    }; 2];
    for (class, slot) in per_class.iter_mut().enumerate() {
        let mut predicted_class = 0usize;
        let mut actual_class = 0usize;
        let mut correct_class = 0usize;
        for &(label, pred) in pairs {
            if pred == class {
                predicted_class += 1;
            }
            if label == class {
                actual_class += 1;
            }
            if label == class && pred == class {
                correct_class += 1;
            }
        }
        let precision = if predicted_class == 0 {
            0.0
        } else {
            correct_class as f64 / predicted_class as f64
        };
        let sensitivity = if actual_class == 0 {
            0.0
        } else {
            correct_class as f64 / actual_class as f64
        };
        let f1 = if precision + sensitivity == 0.0 {
            0.0
        } else {
            2.0 * precision * sensitivity / (precision + sensitivity)
        };
        *slot = NaiveScores {
            precision,
            sensitivity,
            f1,
        };
    }

    NaiveMetrics {
        tp,
        tn,
        fp,
        fn_,
        accuracy,
        per_class,
    }
}

/// Expands confusion counts into an explicit pair list, for feeding
/// count-based cases through the same brute-force path.
pub fn pairs_from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(tp + tn + fp + fn_);
    pairs.extend(std::iter::repeat_n((1, 1), tp));
    pairs.extend(std::iter::repeat_n((0, 0), tn));
    pairs.extend(std::iter::repeat_n((0, 1), fp));
    pairs.extend(std::iter::repeat_n((1, 0), fn_));
    pairs
}
