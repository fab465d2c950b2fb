//! Per-example surrogate losses on the tape.
//!
//! Every loss returns a length-|B| vector node so per-example weights can
//! multiply in afterwards; the only reduction happens in
//! [`mean_weighted_loss`], which is where the conditional weights enter the
//! graph.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

/// Which surrogate loss to apply per example.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `-log p_y` with `p = softmax(logits)`.
    CrossEntropy,
    /// `-(1 - p_y)^γ · log p_y`. γ = 0 reduces to cross-entropy.
    Focal { gamma: f64 },
    /// Cross-entropy of `s · (z - Δ·onehot_y)` with per-class margins
    /// `Δ_y = C_m / n_y^(1/4)`.
    Ldam {
        max_margin: f64,
        scale: f64,
        class_counts: Vec<usize>,
    },
}

impl LossKind {
    /// LDAM with the common defaults: s = 30 and `C_m` chosen so the largest
    /// margin (the smallest class's) is 0.5.
    pub fn ldam_default(class_counts: &[usize]) -> Result<Self> {
        let min = class_counts.iter().min().copied().unwrap_or(0);
        if min == 0 {
            return Err(Error::InvalidArgument {
                arg: "class_counts",
                reason: format!("every class needs at least one example: {class_counts:?}"),
            });
        }
        let max_margin = 0.5 * libm::pow(min as f64, 0.25);
        Ok(LossKind::Ldam {
            max_margin,
            scale: 30.0,
            class_counts: class_counts.to_vec(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::CrossEntropy => Ok(()),
            LossKind::Focal { gamma } => {
                if *gamma < 0.0 || !gamma.is_finite() {
                    return Err(Error::InvalidArgument {
                        arg: "gamma",
                        reason: format!("focal gamma must be >= 0, got {gamma}"),
                    });
                }
                Ok(())
            }
            LossKind::Ldam {
                max_margin,
                scale,
                class_counts,
            } => {
                if *max_margin < 0.0 || !max_margin.is_finite() {
                    return Err(Error::InvalidArgument {
                        arg: "max_margin",
                        reason: format!("LDAM margin must be >= 0, got {max_margin}"),
                    });
                }
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidArgument {
                        arg: "scale",
                        reason: format!("LDAM scale must be positive, got {scale}"),
                    });
                }
                if class_counts.contains(&0) {
                    return Err(Error::InvalidArgument {
                        arg: "class_counts",
                        reason: format!("every class needs at least one example: {class_counts:?}"),
                    });
                }
                Ok(())
            }
        }
    }

    /// LDAM per-class margins; empty for the other kinds.
    pub fn margins(&self) -> Vec<f64> {
        match self {
            LossKind::Ldam {
                max_margin,
                class_counts,
                ..
            } => class_counts
                .iter()
                .map(|&n| max_margin / libm::pow(n as f64, 0.25))
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Per-example losses for a batch of logits: a `[|B|]` vector on the tape,
/// differentiable with respect to the logits.
pub fn per_example_loss(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    kind: &LossKind,
) -> Result<NodeId> {
    kind.validate()?;
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "per_example_loss",
            detail: format!("logits must be [batch, classes], got {shape:?}"),
        });
    }
    let (rows, k) = (shape[0], shape[1]);
    if labels.len() != rows {
        return Err(Error::LengthMismatch {
            op: "per_example_loss",
            left: labels.len(),
            right: rows,
        });
    }
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: k,
            });
        }
    }

    match kind {
        LossKind::CrossEntropy => cross_entropy(tape, logits, labels),
        LossKind::Focal { gamma } => {
            let ce = cross_entropy(tape, logits, labels)?;
            // p_y = exp(z_y - lse); weight = (1 - p_y)^γ.
            let lse = tape.log_sum_exp(logits)?;
            let zy = tape.gather(logits, labels)?;
            let log_p = tape.sub(zy, lse)?;
            let p = tape.exp(log_p);
            let ones = tape.leaf(Tensor::from_raw(vec![rows], vec![1.0; rows]));
            let one_minus_p = tape.sub(ones, p)?;
            let w = tape.pow_const(one_minus_p, *gamma);
            tape.mul(w, ce)
        }
        LossKind::Ldam {
            scale,
            class_counts,
            ..
        } => {
            if class_counts.len() != k {
                return Err(Error::LengthMismatch {
                    op: "per_example_loss (LDAM counts)",
                    left: class_counts.len(),
                    right: k,
                });
            }
            let margins = kind.margins();
            let mut margin_data = vec![0.0; rows * k];
            for (i, &y) in labels.iter().enumerate() {
                margin_data[i * k + y] = margins[y];
            }
            let margin = tape.leaf(Tensor::from_raw(vec![rows, k], margin_data));
            let shifted = tape.sub(logits, margin)?;
            let scaled = tape.scalar_mul(shifted, *scale);
            cross_entropy(tape, scaled, labels)
        }
    }
}

fn cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let lse = tape.log_sum_exp(logits)?;
    let zy = tape.gather(logits, labels)?;
    tape.sub(lse, zy)
}

/// `(1/|B|) Σ weights_i · losses_i` as a scalar node, differentiable with
/// respect to both factors.
pub fn mean_weighted_loss(tape: &mut Tape, losses: NodeId, weights: NodeId) -> Result<NodeId> {
    let (nl, nw) = (tape.value(losses).len(), tape.value(weights).len());
    if nl != nw {
        return Err(Error::LengthMismatch {
            op: "mean_weighted_loss",
            left: nl,
            right: nw,
        });
    }
    if nl == 0 {
        return Err(Error::Empty {
            what: "mean_weighted_loss input",
        });
    }
    let weighted = tape.mul(losses, weights)?;
    tape.mean(weighted)
}
