//! The two-component example weights.
//!
//! Component one: class-wise weights `w_y = (1-β)/(1-β^{n_y})` from effective
//! numbers. Component two: per-batch conditional weights ε, updated once per
//! batch by the exact meta-gradient of the development loss after a one-step
//! lookahead. Because the lookahead parameters are affine in ε with
//! per-example gradients that do not depend on ε, the meta-gradient has the
//! closed form `-(η/|B|) · (g_i · g_d)`; no higher-order autodiff is needed.
//!
//! Conditional weights are never clipped or normalized in the primary path;
//! [`l2rw_postprocess`] exists for the ablation arm that does both.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::loss::{mean_weighted_loss, per_example_loss, LossKind};
use crate::model::Model;
use crate::param::ParamVector;
use crate::tensor::{Tape, Tensor};

/// Per-class loss multipliers derived from effective numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
    beta: f64,
    counts: Vec<usize>,
    normalized: bool,
}

impl ClassWeights {
    /// All-ones weights (the vanilla objective).
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            weights: vec![1.0; num_classes],
            beta: 0.0,
            counts: vec![1; num_classes],
            normalized: false,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_for(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Per-example weights `w_{y_i}` for a label vector.
    pub fn for_labels(&self, labels: &[usize]) -> Result<Vec<f64>> {
        labels
            .iter()
            .map(|&y| {
                if y >= self.weights.len() {
                    Err(Error::LabelOutOfRange {
                        label: y,
                        num_classes: self.weights.len(),
                    })
                } else {
                    Ok(self.weights[y])
                }
            })
            .collect()
    }
}

/// The recommended β = (n-1)/n for a training set of n examples.
pub fn recommended_beta(total_examples: usize) -> f64 {
    if total_examples == 0 {
        return 0.0;
    }
    (total_examples as f64 - 1.0) / total_examples as f64
}

/// Class weights from effective numbers: `w_y = (1-β)/(1-β^{n_y})`.
///
/// β = 0 gives all ones; β → 1 approaches inverse class frequency. With
/// `normalize`, weights are rescaled to sum to K.
pub fn effective_number_weights(
    counts: &[usize],
    beta: f64,
    normalize: bool,
) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument {
            arg: "beta",
            reason: format!("must lie in [0, 1), got {beta}"),
        });
    }
    if counts.is_empty() {
        return Err(Error::Empty {
            what: "class counts",
        });
    }
    if counts.contains(&0) {
        return Err(Error::InvalidArgument {
            arg: "counts",
            reason: format!("every class needs at least one example: {counts:?}"),
        });
    }
    let mut weights: Vec<f64> = counts
        .iter()
        .map(|&n| {
            if beta == 0.0 {
                1.0
            } else {
                (1.0 - beta) / (1.0 - libm::pow(beta, n as f64))
            }
        })
        .collect();
    if normalize {
        let sum: f64 = weights.iter().sum();
        let k = weights.len() as f64;
        for w in weights.iter_mut() {
            *w *= k / sum;
        }
    }
    Ok(ClassWeights {
        weights,
        beta,
        counts: counts.to_vec(),
        normalized: normalize,
    })
}

/// Per-batch conditional weights ε, re-initialized to zero for every batch.
///
/// Values are unrestricted in sign; nothing here clips or normalizes them.
#[derive(Debug, Clone)]
pub struct EpsilonBatch {
    values: Vec<f64>,
    indices: Vec<usize>,
    eta: f64,
}

impl EpsilonBatch {
    /// Fresh ε = 0 for the batch at `indices`, remembering the lookahead η.
    pub fn zeros(indices: Vec<usize>, eta: f64) -> Self {
        let n = indices.len();
        Self {
            values: vec![0.0; n],
            indices,
            eta,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One gradient step on ε: `ε_i ← ε_i - τ · grad_i`, sign unrestricted.
pub fn update_epsilon(eps: &mut EpsilonBatch, grad: &[f64], tau: f64) -> Result<()> {
    if grad.len() != eps.values.len() {
        return Err(Error::LengthMismatch {
            op: "update_epsilon",
            left: grad.len(),
            right: eps.values.len(),
        });
    }
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument {
            arg: "tau",
            reason: format!("must be finite and >= 0, got {tau}"),
        });
    }
    for (e, g) in eps.values.iter_mut().zip(grad) {
        *e -= tau * g;
    }
    Ok(())
}

/// Total per-example weights `w_{y_i} + ε_i`.
pub fn total_weight(
    class_weights: &ClassWeights,
    labels: &[usize],
    eps: &EpsilonBatch,
) -> Result<Vec<f64>> {
    if labels.len() != eps.len() {
        return Err(Error::LengthMismatch {
            op: "total_weight",
            left: labels.len(),
            right: eps.len(),
        });
    }
    let mut out = class_weights.for_labels(labels)?;
    for (w, e) in out.iter_mut().zip(eps.values()) {
        *w += e;
    }
    Ok(out)
}

/// Running minimum of the total weights, kept as a diagnostic only — the
/// primary path never enforces non-negativity.
#[derive(Debug, Clone, Copy)]
pub struct MinWeightTracker {
    min: f64,
}

impl MinWeightTracker {
    pub fn new() -> Self {
        Self { min: f64::INFINITY }
    }

    pub fn observe(&mut self, weights: &[f64]) {
        for &w in weights {
            if w < self.min {
                self.min = w;
            }
        }
    }

    /// Smallest weight seen, or +inf when nothing was observed.
    pub fn min(&self) -> f64 {
        self.min
    }
}

impl Default for MinWeightTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// The L2RW weight post-processing: clip negatives to zero, then normalize
/// to sum one; an all-non-positive batch comes back all zeros.
pub fn l2rw_postprocess(raw_weights: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw_weights.iter().map(|&w| w.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum > 0.0 {
        clipped.iter().map(|&w| w / sum).collect()
    } else {
        vec![0.0; raw_weights.len()]
    }
}

/// A differentiable per-example training objective evaluated at explicit
/// parameters. The meta-gradient and its finite-difference oracle are both
/// written against this, so a test can plug in toy objectives.
pub trait Objective {
    fn param_len(&self) -> usize;

    /// `∇_θ L(f(x_i; θ), y_i)` for every example of the batch, one
    /// independent backward pass per example, in batch order.
    fn per_example_grads(&self, theta: &ParamVector, batch: &Batch) -> Result<Vec<ParamVector>>;

    /// Unweighted mean loss over the batch at θ (forward only).
    fn mean_loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64>;

    /// Value and `∇_θ` of the unweighted mean loss at θ.
    fn mean_loss_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)>;

    /// Value and `∇_θ` of `(1/|B|) Σ weights_i · L_i` at θ.
    fn weighted_loss_grad(
        &self,
        theta: &ParamVector,
        batch: &Batch,
        weights: &[f64],
    ) -> Result<(f64, ParamVector)>;
}

/// The classifier objective: a model plus a loss kind.
pub struct ClassifierObjective<'a> {
    pub model: &'a Model,
    pub loss: LossKind,
}

impl<'a> ClassifierObjective<'a> {
    pub fn new(model: &'a Model, loss: LossKind) -> Self {
        Self { model, loss }
    }
}

impl Objective for ClassifierObjective<'_> {
    fn param_len(&self) -> usize {
        self.model.param_count()
    }

    fn per_example_grads(&self, theta: &ParamVector, batch: &Batch) -> Result<Vec<ParamVector>> {
        let mut grads = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let features = batch.features.select_rows(&[i])?;
            let label = [batch.labels[i]];
            let mut tape = Tape::new();
            let pass = self.model.forward_with(&mut tape, theta, &features)?;
            let losses = per_example_loss(&mut tape, pass.logits, &label, &self.loss)?;
            let root = tape.sum(losses);
            let g = tape.backward(root)?;
            grads.push(pass.grad_vector(&g));
        }
        Ok(grads)
    }

    fn mean_loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let pass = self.model.forward_with(&mut tape, theta, &batch.features)?;
        let losses = per_example_loss(&mut tape, pass.logits, &batch.labels, &self.loss)?;
        let root = tape.mean(losses)?;
        Ok(tape.value(root).scalar_value().expect("mean is scalar"))
    }

    fn mean_loss_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let mut tape = Tape::new();
        let pass = self.model.forward_with(&mut tape, theta, &batch.features)?;
        let losses = per_example_loss(&mut tape, pass.logits, &batch.labels, &self.loss)?;
        let root = tape.mean(losses)?;
        let value = tape.value(root).scalar_value().expect("mean is scalar");
        let grads = tape.backward(root)?;
        Ok((value, pass.grad_vector(&grads)))
    }

    fn weighted_loss_grad(
        &self,
        theta: &ParamVector,
        batch: &Batch,
        weights: &[f64],
    ) -> Result<(f64, ParamVector)> {
        let mut tape = Tape::new();
        let pass = self.model.forward_with(&mut tape, theta, &batch.features)?;
        let losses = per_example_loss(&mut tape, pass.logits, &batch.labels, &self.loss)?;
        let w = tape.leaf(Tensor::vector(weights)?);
        let root = mean_weighted_loss(&mut tape, losses, w)?;
        let value = tape.value(root).scalar_value().expect("mean is scalar");
        let grads = tape.backward(root)?;
        Ok((value, pass.grad_vector(&grads)))
    }
}

/// The lookahead parameters `θ̃ = θ - (η/|B|) Σ_i weights_i · g_i`.
pub fn lookahead_params(
    theta: &ParamVector,
    per_example_grads: &[ParamVector],
    weights: &[f64],
    eta: f64,
) -> ParamVector {
    let b = per_example_grads.len() as f64;
    let mut tilde = theta.clone();
    for (g, &w) in per_example_grads.iter().zip(weights) {
        tilde.axpy(-(eta / b) * w, g);
    }
    tilde
}

/// Exact gradient of the development loss after the one-step lookahead with
/// respect to each example's conditional weight.
///
/// Computed in closed form:
/// 1. per-example gradients `g_i = ∇_θ L_i(θ)` over the train batch;
/// 2. `θ̃ = θ - (η/|B|) Σ (w_{y_i}+ε_i) g_i`;
/// 3. `g_d = ∇_θ` of the unweighted mean development loss at `θ̃`;
/// 4. entry i is `-(η/|B|) · (g_i · g_d)`.
///
/// Exact because θ̃ is affine in ε and the `g_i` do not depend on ε.
pub fn meta_epsilon_gradient(
    objective: &impl Objective,
    theta: &ParamVector,
    train_batch: &Batch,
    dev_batch: &Batch,
    class_weights: &ClassWeights,
    eps: &EpsilonBatch,
    eta: f64,
) -> Result<Vec<f64>> {
    let weights = total_weight(class_weights, &train_batch.labels, eps)?;
    meta_epsilon_gradient_with_weights(objective, theta, train_batch, dev_batch, &weights, eta)
}

/// [`meta_epsilon_gradient`] with explicit lookahead weights; the L2RW arm
/// uses this without any class-weight component.
pub fn meta_epsilon_gradient_with_weights(
    objective: &impl Objective,
    theta: &ParamVector,
    train_batch: &Batch,
    dev_batch: &Batch,
    lookahead_weights: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    if train_batch.is_empty() || dev_batch.is_empty() {
        return Err(Error::Empty {
            what: "meta-gradient batch",
        });
    }
    if lookahead_weights.len() != train_batch.len() {
        return Err(Error::LengthMismatch {
            op: "meta_epsilon_gradient",
            left: lookahead_weights.len(),
            right: train_batch.len(),
        });
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument {
            arg: "eta",
            reason: format!("lookahead rate must be finite and positive, got {eta}"),
        });
    }
    let grads = objective.per_example_grads(theta, train_batch)?;
    let tilde = lookahead_params(theta, &grads, lookahead_weights, eta);
    let (_, dev_grad) = objective.mean_loss_grad(&tilde, dev_batch)?;
    let b = grads.len() as f64;
    Ok(grads
        .iter()
        .map(|g| -(eta / b) * g.dot(&dev_grad))
        .collect())
}
