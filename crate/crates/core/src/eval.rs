//! Balanced-test evaluation: top-k error, confusion matrices, per-class
//! accuracy, and conditional-weight trajectory summaries.
//!
//! Ranking ties are broken toward the lower class index, so every metric is
//! deterministic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::EpsilonLog;

/// Fraction of rows whose true label is absent from the k largest logits.
pub fn top_k_error(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "top_k_error",
            detail: format!("logits must be [n, classes], got {shape:?}"),
        });
    }
    let (n, classes) = (shape[0], shape[1]);
    if k == 0 || k > classes {
        return Err(Error::InvalidArgument {
            arg: "k",
            reason: format!("k must lie in [1, {classes}], got {k}"),
        });
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            op: "top_k_error",
            left: labels.len(),
            right: n,
        });
    }
    if n == 0 {
        return Err(Error::Empty {
            what: "top_k_error input",
        });
    }
    let mut misses = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(classes);
    for (row, &y) in logits.data().chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: classes,
            });
        }
        order.clear();
        order.extend(0..classes);
        // Descending by logit; equal logits rank the lower index first.
        order.sort_unstable_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        if !order[..k].contains(&y) {
            misses += 1;
        }
    }
    Ok(misses as f64 / n as f64)
}

/// K×K counts: rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<usize>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> usize {
        self.counts[true_class * self.num_classes + predicted]
    }

    pub fn row(&self, true_class: usize) -> &[usize] {
        &self.counts[true_class * self.num_classes..(true_class + 1) * self.num_classes]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes).map(|i| self.count(i, i)).sum()
    }

    pub fn top1_error(&self) -> f64 {
        1.0 - self.trace() as f64 / self.total() as f64
    }
}

/// Confusion matrix from logits; prediction is the argmax with ties broken
/// toward the lower class index.
pub fn confusion(logits: &Tensor, labels: &[usize]) -> Result<ConfusionMatrix> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            detail: format!("logits must be [n, classes], got {shape:?}"),
        });
    }
    let (n, classes) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            op: "confusion",
            left: labels.len(),
            right: n,
        });
    }
    let mut counts = vec![0usize; classes * classes];
    for (row, &y) in logits.data().chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: classes,
            });
        }
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        counts[y * classes + best] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        num_classes: classes,
    })
}

/// Per-class accuracy: diagonal over row sums; empty rows report 0.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|y| {
            let total: usize = cm.row(y).iter().sum();
            if total == 0 {
                0.0
            } else {
                cm.count(y, y) as f64 / total as f64
            }
        })
        .collect()
}

/// Mean conditional weight per class for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonEpochMeans {
    pub epoch: usize,
    /// One mean per class; classes with no logged values that epoch are 0.
    pub class_means: Vec<f64>,
}

/// Per-epoch, per-class means of the raw conditional-weight log.
pub fn epsilon_summary(log: &EpsilonLog, num_classes: usize) -> Vec<EpsilonEpochMeans> {
    let mut epochs: Vec<usize> = log.records().iter().map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();

    epochs
        .into_iter()
        .map(|epoch| {
            let mut sums = vec![0.0; num_classes];
            let mut counts = vec![0usize; num_classes];
            for r in log.records().iter().filter(|r| r.epoch == epoch) {
                sums[r.class] += r.value;
                counts[r.class] += 1;
            }
            let class_means = sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect();
            EpsilonEpochMeans { epoch, class_means }
        })
        .collect()
}
