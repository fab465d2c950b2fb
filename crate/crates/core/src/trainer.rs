//! The two-stage training procedure and its baseline modes.
//!
//! Stage 1 pretrains with the plain unweighted loss. Stage 2 continues per
//! mode: `Ours` re-initializes the conditional weights to zero each batch,
//! takes a one-step lookahead, updates ε once from the development-set
//! meta-gradient, then recomputes the weighted loss at the original
//! parameters and steps θ. The L2RW arms substitute the weighting path
//! (no class component unless two-component, clip-and-normalize applied);
//! `OursLearnW` meta-learns the K class weights instead of per-example ε.
//!
//! With τ = 0 the meta modes reduce exactly — bitwise — to vanilla or
//! class-balanced training, which the tests assert.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::top_k_error;
use crate::loss::LossKind;
use crate::model::Model;
use crate::param::ParamVector;
use crate::seeding;
use crate::weighting::{
    effective_number_weights, l2rw_postprocess, meta_epsilon_gradient_with_weights,
    recommended_beta, total_weight, update_epsilon, ClassWeights, ClassifierObjective,
    EpsilonBatch, MinWeightTracker, Objective,
};

/// Which weighting path stage 2 follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Unweighted loss throughout.
    Vanilla,
    /// Fixed effective-number class weights in stage 2.
    ClassBalanced,
    /// Meta-learned per-example weights, no class component, clipped and
    /// normalized per batch.
    L2rw,
    /// L2RW postprocessing applied to the two-component weights.
    L2rwTwoComponent,
    /// The primary method: class weights plus unconstrained conditional ε.
    Ours,
    /// Ablation: meta-learn the K class weights themselves, no ε.
    OursLearnW,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Vanilla => "vanilla",
            TrainMode::ClassBalanced => "class_balanced",
            TrainMode::L2rw => "l2rw",
            TrainMode::L2rwTwoComponent => "l2rw_two_component",
            TrainMode::Ours => "ours",
            TrainMode::OursLearnW => "ours_learn_w",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "vanilla" => TrainMode::Vanilla,
            "class_balanced" => TrainMode::ClassBalanced,
            "l2rw" => TrainMode::L2rw,
            "l2rw_two_component" => TrainMode::L2rwTwoComponent,
            "ours" => TrainMode::Ours,
            "ours_learn_w" => TrainMode::OursLearnW,
            _ => return None,
        })
    }

    /// Whether stage 2 samples development batches and meta-updates weights.
    pub fn is_meta(self) -> bool {
        matches!(
            self,
            TrainMode::L2rw | TrainMode::L2rwTwoComponent | TrainMode::Ours | TrainMode::OursLearnW
        )
    }
}

/// One learning-rate decay: multiply the rate by `multiplier` from `step` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrDecay {
    pub step: usize,
    pub multiplier: f64,
}

/// Everything that defines one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub loss: LossKind,
    /// Model learning rate η (also the lookahead rate).
    pub eta: f64,
    /// Meta learning rate τ for the conditional weights.
    pub tau: f64,
    /// Stage-1 (pretraining) steps.
    pub t1: usize,
    /// Stage-2 steps.
    pub t2: usize,
    pub batch_size: usize,
    /// Development batch size; 0 means `batch_size`.
    pub dev_batch_size: usize,
    pub momentum: f64,
    pub lr_schedule: Vec<LrDecay>,
    /// Start stage 2 at the first scheduled decay instead of at `t1`.
    pub stage_switch_at_first_decay: bool,
    /// Effective-number β; `None` picks (n-1)/n from the training set size.
    pub beta: Option<f64>,
    pub normalize_class_weights: bool,
    /// Apply class weights when the loss is LDAM (on from stage-2 start).
    pub ldam_class_weights: bool,
    /// Evaluate every this many steps; 0 evaluates at epoch boundaries.
    pub eval_every: usize,
    pub seed: u64,
    /// Keep a per-step parameter snapshot (for trajectory comparisons).
    pub record_trajectory: bool,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, loss: LossKind) -> Self {
        Self {
            mode,
            loss,
            eta: 0.1,
            tau: 1e-3,
            t1: 0,
            t2: 0,
            batch_size: 32,
            dev_batch_size: 0,
            momentum: 0.9,
            lr_schedule: Vec::new(),
            stage_switch_at_first_decay: false,
            beta: None,
            normalize_class_weights: true,
            ldam_class_weights: true,
            eval_every: 0,
            seed: 0,
            record_trajectory: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument {
                arg: "eta",
                reason: format!("must be finite and positive, got {}", self.eta),
            });
        }
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(Error::InvalidArgument {
                arg: "tau",
                reason: format!("must be finite and >= 0, got {}", self.tau),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument {
                arg: "batch_size",
                reason: String::from("must be positive"),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument {
                arg: "momentum",
                reason: format!("must lie in [0, 1), got {}", self.momentum),
            });
        }
        if let Some(beta) = self.beta {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidArgument {
                    arg: "beta",
                    reason: format!("must lie in [0, 1), got {beta}"),
                });
            }
        }
        for pair in self.lr_schedule.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::InvalidArgument {
                    arg: "lr_schedule",
                    reason: format!("steps must be strictly increasing: {:?}", self.lr_schedule),
                });
            }
        }
        if self
            .lr_schedule
            .iter()
            .any(|d| !(d.multiplier > 0.0) || !d.multiplier.is_finite())
        {
            return Err(Error::InvalidArgument {
                arg: "lr_schedule",
                reason: String::from("multipliers must be finite and positive"),
            });
        }
        if self.stage_switch_at_first_decay && self.lr_schedule.is_empty() {
            return Err(Error::InvalidArgument {
                arg: "stage_switch_at_first_decay",
                reason: String::from("needs a non-empty lr_schedule"),
            });
        }
        Ok(())
    }

    /// Learning rate in effect at 1-based `step`: η times every multiplier
    /// whose decay step has been reached. Each decay applies exactly once.
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.eta;
        for d in &self.lr_schedule {
            if d.step <= step {
                lr *= d.multiplier;
            }
        }
        lr
    }

    /// Stage-1 length after resolving the schedule-linked switch flag.
    pub fn effective_t1(&self) -> usize {
        if self.stage_switch_at_first_decay {
            self.lr_schedule[0].step
        } else {
            self.t1
        }
    }

    pub fn effective_dev_batch_size(&self) -> usize {
        if self.dev_batch_size == 0 {
            self.batch_size
        } else {
            self.dev_batch_size
        }
    }
}

/// One raw conditional-weight observation: one example in one stage-2 batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonRecord {
    pub epoch: usize,
    pub class: usize,
    pub value: f64,
}

/// Append-only log of every ε assigned during stage 2.
#[derive(Debug, Clone, Default)]
pub struct EpsilonLog {
    records: Vec<EpsilonRecord>,
}

impl EpsilonLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpsilonRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpsilonRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One metric-log row, emitted per evaluation interval.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub step: usize,
    pub epoch: usize,
    pub mode: TrainMode,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    /// Balanced-test top-k errors; NaN when no test set was supplied.
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    /// Smallest total weight seen so far (+inf before stage 2).
    pub min_total_weight: f64,
    /// Mean ε per class since the previous row.
    pub eps_class_means: Vec<f64>,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_params: ParamVector,
    pub metrics: Vec<MetricRow>,
    pub eps_log: EpsilonLog,
    /// Minimum of `w_{y_i} + ε_i` across the run (a recorded observation,
    /// never an assertion).
    pub min_total_weight: f64,
    /// Per-batch sums of the postprocessed L2RW weights.
    pub l2rw_weight_sums: Vec<f64>,
    pub trajectory: Vec<ParamVector>,
    /// The class weights stage 2 started from, when the mode uses them.
    pub class_weights: Option<Vec<f64>>,
    /// Final class weights for `OursLearnW`.
    pub learned_class_weights: Option<Vec<f64>>,
}

/// Without-replacement batch order, reshuffled each epoch.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchStream {
    fn new(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self {
            order,
            pos: 0,
            batch_size,
        }
    }

    /// Next batch indices plus whether this batch completes an epoch.
    fn next(&mut self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let take = self.batch_size.min(self.order.len() - self.pos);
        let batch = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        (batch, self.pos >= self.order.len())
    }
}

/// Mutable state of one training run.
pub struct TrainState {
    pub params: ParamVector,
    pub velocity: ParamVector,
    /// Completed update steps (1-based once training starts).
    pub step: usize,
    /// Completed passes over the training set.
    pub epoch: usize,
    pub metrics: Vec<MetricRow>,
    pub eps_log: EpsilonLog,
    pub min_weight: MinWeightTracker,
    pub l2rw_weight_sums: Vec<f64>,
    pub trajectory: Vec<ParamVector>,
    batch_rng: ChaCha8Rng,
    dev_rng: ChaCha8Rng,
    train_stream: BatchStream,
    dev_stream: Option<BatchStream>,
    loss_sum: f64,
    loss_count: usize,
    eps_sums: Vec<f64>,
    eps_counts: Vec<usize>,
    num_classes: usize,
}

impl TrainState {
    pub fn new(
        model: &Model,
        train: &LabeledDataset,
        dev: Option<&LabeledDataset>,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Empty {
                what: "training set",
            });
        }
        let mut batch_rng = seeding::substream(config.seed, "train-batches");
        let mut dev_rng = seeding::substream(config.seed, "dev-batches");
        let train_stream = BatchStream::new(train.len(), config.batch_size, &mut batch_rng);
        let dev_stream = dev
            .filter(|d| !d.is_empty())
            .map(|d| BatchStream::new(d.len(), config.effective_dev_batch_size(), &mut dev_rng));
        let k = model.num_classes();
        Ok(Self {
            params: model.get_params(),
            velocity: ParamVector::zeros(model.param_count()),
            step: 0,
            epoch: 0,
            metrics: Vec::new(),
            eps_log: EpsilonLog::new(),
            min_weight: MinWeightTracker::new(),
            l2rw_weight_sums: Vec::new(),
            trajectory: Vec::new(),
            batch_rng,
            dev_rng,
            train_stream,
            dev_stream,
            loss_sum: 0.0,
            loss_count: 0,
            eps_sums: vec![0.0; k],
            eps_counts: vec![0; k],
            num_classes: k,
        })
    }

    fn record_eps(&mut self, labels: &[usize], eps: &[f64]) {
        for (&y, &e) in labels.iter().zip(eps) {
            self.eps_log.push(EpsilonRecord {
                epoch: self.epoch,
                class: y,
                value: e,
            });
            self.eps_sums[y] += e;
            self.eps_counts[y] += 1;
        }
    }

    fn flush_metric_row(
        &mut self,
        model: &Model,
        test: Option<&LabeledDataset>,
        config: &TrainConfig,
    ) -> Result<()> {
        let train_loss = if self.loss_count == 0 {
            0.0
        } else {
            self.loss_sum / self.loss_count as f64
        };
        let (top1, top3, top5) = match test {
            Some(t) if !t.is_empty() => {
                let logits = model.logits_with(&self.params, t.features())?;
                let k = self.num_classes;
                (
                    top_k_error(&logits, t.labels(), 1)?,
                    top_k_error(&logits, t.labels(), 3.min(k))?,
                    top_k_error(&logits, t.labels(), 5.min(k))?,
                )
            }
            _ => (f64::NAN, f64::NAN, f64::NAN),
        };
        let eps_class_means = self
            .eps_sums
            .iter()
            .zip(&self.eps_counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        self.metrics.push(MetricRow {
            step: self.step,
            epoch: self.epoch,
            mode: config.mode,
            train_loss,
            top1,
            top3,
            top5,
            min_total_weight: self.min_weight.min(),
            eps_class_means,
        });
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.eps_sums.iter_mut().for_each(|s| *s = 0.0);
        self.eps_counts.iter_mut().for_each(|c| *c = 0);
        Ok(())
    }

    /// SGD step, bookkeeping, and evaluation cadence shared by every mode.
    #[allow(clippy::too_many_arguments)]
    fn finish_step(
        &mut self,
        model: &Model,
        test: Option<&LabeledDataset>,
        config: &TrainConfig,
        loss: f64,
        grad: &ParamVector,
        lr: f64,
        epoch_done: bool,
    ) -> Result<()> {
        sgd_momentum_step(self, grad, lr, config.momentum);
        self.step += 1;
        self.loss_sum += loss;
        self.loss_count += 1;
        if config.record_trajectory {
            self.trajectory.push(self.params.clone());
        }
        if epoch_done {
            self.epoch += 1;
        }
        let due = if config.eval_every > 0 {
            self.step.is_multiple_of(config.eval_every)
        } else {
            epoch_done
        };
        if due {
            self.flush_metric_row(model, test, config)?;
        }
        Ok(())
    }

    fn next_train_batch(&mut self) -> (Vec<usize>, bool) {
        self.train_stream.next(&mut self.batch_rng)
    }

    fn next_dev_batch(&mut self) -> Result<Vec<usize>> {
        match self.dev_stream.as_mut() {
            Some(stream) => Ok(stream.next(&mut self.dev_rng).0),
            None => Err(Error::Empty {
                what: "development set",
            }),
        }
    }
}

/// Momentum SGD: `v ← m·v + grad; θ ← θ - lr·v`.
pub fn sgd_momentum_step(state: &mut TrainState, grad: &ParamVector, lr: f64, momentum: f64) {
    state.velocity.scale(momentum);
    state.velocity.axpy(1.0, grad);
    state.params.axpy(-lr, &state.velocity);
}

/// Stage 1 (pretraining): `steps` unweighted mini-batch updates on T.
pub fn stage1_pretrain(
    state: &mut TrainState,
    model: &Model,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    steps: usize,
) -> Result<()> {
    let objective = ClassifierObjective::new(model, config.loss.clone());
    for _ in 0..steps {
        let (indices, epoch_done) = state.next_train_batch();
        let batch = train.batch(&indices)?;
        let lr = config.lr_at(state.step + 1);
        let (loss, grad) = objective.mean_loss_grad(&state.params, &batch)?;
        state.finish_step(model, test, config, loss, &grad, lr, epoch_done)?;
    }
    Ok(())
}

/// Stage 2 with fixed per-class weights (the class-balanced objective; pass
/// uniform weights for a vanilla continuation along the weighted code path).
pub fn stage2_fixed_weights(
    state: &mut TrainState,
    model: &Model,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    class_weights: &ClassWeights,
    config: &TrainConfig,
    steps: usize,
) -> Result<()> {
    let objective = ClassifierObjective::new(model, config.loss.clone());
    for _ in 0..steps {
        let (indices, epoch_done) = state.next_train_batch();
        let batch = train.batch(&indices)?;
        let lr = config.lr_at(state.step + 1);
        let weights = class_weights.for_labels(&batch.labels)?;
        state.min_weight.observe(&weights);
        let (loss, grad) = objective.weighted_loss_grad(&state.params, &batch, &weights)?;
        state.finish_step(model, test, config, loss, &grad, lr, epoch_done)?;
    }
    Ok(())
}

fn require_balanced_dev(dev: &LabeledDataset) -> Result<()> {
    if dev.is_empty() {
        return Err(Error::Empty {
            what: "development set",
        });
    }
    if !dev.is_balanced() {
        return Err(Error::InvalidArgument {
            arg: "dev",
            reason: format!(
                "development set must be balanced, got {:?}",
                dev.class_counts()
            ),
        });
    }
    Ok(())
}

/// Stage 2 of the primary method: two-component weights with one conditional
/// update per batch.
///
/// Per batch: ε ← 0; lookahead step at the current rate; one ε update from
/// the development meta-gradient; the weighted loss is then recomputed at
/// the original θ with the new ε and θ takes a momentum step. The lookahead
/// parameters and their tape are discarded after the ε update.
#[allow(clippy::too_many_arguments)]
pub fn stage2_meta_train(
    state: &mut TrainState,
    model: &Model,
    train: &LabeledDataset,
    dev: &LabeledDataset,
    test: Option<&LabeledDataset>,
    class_weights: &ClassWeights,
    config: &TrainConfig,
    steps: usize,
) -> Result<()> {
    require_balanced_dev(dev)?;
    let objective = ClassifierObjective::new(model, config.loss.clone());
    for _ in 0..steps {
        let (indices, epoch_done) = state.next_train_batch();
        let batch = train.batch(&indices)?;
        let lr = config.lr_at(state.step + 1);

        let mut eps = EpsilonBatch::zeros(indices, lr);
        let lookahead_w = total_weight(class_weights, &batch.labels, &eps)?;
        let dev_batch = dev.batch(&state.next_dev_batch()?)?;
        let meta_grad = meta_epsilon_gradient_with_weights(
            &objective,
            &state.params,
            &batch,
            &dev_batch,
            &lookahead_w,
            lr,
        )?;
        update_epsilon(&mut eps, &meta_grad, config.tau)?;

        let weights = total_weight(class_weights, &batch.labels, &eps)?;
        state.min_weight.observe(&weights);
        state.record_eps(&batch.labels, eps.values());
        let (loss, grad) = objective.weighted_loss_grad(&state.params, &batch, &weights)?;
        state.finish_step(model, test, config, loss, &grad, lr, epoch_done)?;
    }
    Ok(())
}

/// Stage 2 of the L2RW arm: same meta-gradient, but the weights start from
/// zero (or from the two-component total), then get clipped to non-negative
/// and normalized to sum one before the final loss.
#[allow(clippy::too_many_arguments)]
pub fn train_l2rw(
    state: &mut TrainState,
    model: &Model,
    train: &LabeledDataset,
    dev: &LabeledDataset,
    test: Option<&LabeledDataset>,
    class_weights: Option<&ClassWeights>,
    config: &TrainConfig,
    steps: usize,
) -> Result<()> {
    require_balanced_dev(dev)?;
    let objective = ClassifierObjective::new(model, config.loss.clone());
    for _ in 0..steps {
        let (indices, epoch_done) = state.next_train_batch();
        let batch = train.batch(&indices)?;
        let lr = config.lr_at(state.step + 1);

        let mut eps = EpsilonBatch::zeros(indices, lr);
        let lookahead_w = match class_weights {
            Some(w) => total_weight(w, &batch.labels, &eps)?,
            None => eps.values().to_vec(),
        };
        let dev_batch = dev.batch(&state.next_dev_batch()?)?;
        let meta_grad = meta_epsilon_gradient_with_weights(
            &objective,
            &state.params,
            &batch,
            &dev_batch,
            &lookahead_w,
            lr,
        )?;
        update_epsilon(&mut eps, &meta_grad, config.tau)?;

        let raw = match class_weights {
            Some(w) => total_weight(w, &batch.labels, &eps)?,
            None => eps.values().to_vec(),
        };
        let weights = l2rw_postprocess(&raw);
        state.l2rw_weight_sums.push(weights.iter().sum());
        state.min_weight.observe(&weights);
        state.record_eps(&batch.labels, eps.values());
        let (loss, grad) = objective.weighted_loss_grad(&state.params, &batch, &weights)?;
        state.finish_step(model, test, config, loss, &grad, lr, epoch_done)?;
    }
    Ok(())
}

/// Sum per-example meta-gradients into per-class buckets: `∂/∂w_y = Σ_{i: y_i = y} ∂/∂ε_i`.
pub fn aggregate_meta_gradient_by_class(
    meta_grad: &[f64],
    labels: &[usize],
    num_classes: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; num_classes];
    for (&g, &y) in meta_grad.iter().zip(labels) {
        out[y] += g;
    }
    out
}

/// Stage 2 of the `OursLearnW` ablation: the K class weights are the
/// meta-learned variables; they persist across batches. Returns the final
/// learned weights.
#[allow(clippy::too_many_arguments)]
pub fn train_ours_learn_w(
    state: &mut TrainState,
    model: &Model,
    train: &LabeledDataset,
    dev: &LabeledDataset,
    test: Option<&LabeledDataset>,
    initial_weights: &ClassWeights,
    config: &TrainConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    require_balanced_dev(dev)?;
    let objective = ClassifierObjective::new(model, config.loss.clone());
    let mut learned: Vec<f64> = initial_weights.weights().to_vec();
    for _ in 0..steps {
        let (indices, epoch_done) = state.next_train_batch();
        let batch = train.batch(&indices)?;
        let lr = config.lr_at(state.step + 1);

        let lookahead_w: Vec<f64> = batch.labels.iter().map(|&y| learned[y]).collect();
        let dev_batch = dev.batch(&state.next_dev_batch()?)?;
        let meta_grad = meta_epsilon_gradient_with_weights(
            &objective,
            &state.params,
            &batch,
            &dev_batch,
            &lookahead_w,
            lr,
        )?;
        let by_class = aggregate_meta_gradient_by_class(&meta_grad, &batch.labels, learned.len());
        for (w, g) in learned.iter_mut().zip(&by_class) {
            *w -= config.tau * g;
        }

        let weights: Vec<f64> = batch.labels.iter().map(|&y| learned[y]).collect();
        state.min_weight.observe(&weights);
        let (loss, grad) = objective.weighted_loss_grad(&state.params, &batch, &weights)?;
        state.finish_step(model, test, config, loss, &grad, lr, epoch_done)?;
    }
    Ok(learned)
}

/// Class weights for stage 2 under this config: effective numbers with the
/// configured (or recommended) β, or uniform when the mode ignores them or
/// the LDAM flag disables them.
pub fn stage2_class_weights(train: &LabeledDataset, config: &TrainConfig) -> Result<ClassWeights> {
    let uses_ldam = matches!(config.loss, LossKind::Ldam { .. });
    if uses_ldam && !config.ldam_class_weights {
        return Ok(ClassWeights::uniform(train.num_classes()));
    }
    let beta = config.beta.unwrap_or_else(|| recommended_beta(train.len()));
    effective_number_weights(train.class_counts(), beta, config.normalize_class_weights)
}

/// Run the full two-stage procedure for the configured mode.
pub fn run_training(
    model: &Model,
    train: &LabeledDataset,
    dev: Option<&LabeledDataset>,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<RunResult> {
    let mut state = TrainState::new(model, train, dev, config)?;
    let t1 = config.effective_t1();
    stage1_pretrain(&mut state, model, train, test, config, t1)?;

    let mut class_weights = None;
    let mut learned = None;
    match config.mode {
        TrainMode::Vanilla => {
            stage1_pretrain(&mut state, model, train, test, config, config.t2)?;
        }
        TrainMode::ClassBalanced => {
            let w = stage2_class_weights(train, config)?;
            stage2_fixed_weights(&mut state, model, train, test, &w, config, config.t2)?;
            class_weights = Some(w.weights().to_vec());
        }
        TrainMode::Ours => {
            let dev = dev.ok_or(Error::Empty {
                what: "development set",
            })?;
            let w = stage2_class_weights(train, config)?;
            stage2_meta_train(&mut state, model, train, dev, test, &w, config, config.t2)?;
            class_weights = Some(w.weights().to_vec());
        }
        TrainMode::L2rw => {
            let dev = dev.ok_or(Error::Empty {
                what: "development set",
            })?;
            train_l2rw(&mut state, model, train, dev, test, None, config, config.t2)?;
        }
        TrainMode::L2rwTwoComponent => {
            let dev = dev.ok_or(Error::Empty {
                what: "development set",
            })?;
            let w = stage2_class_weights(train, config)?;
            train_l2rw(
                &mut state,
                model,
                train,
                dev,
                test,
                Some(&w),
                config,
                config.t2,
            )?;
            class_weights = Some(w.weights().to_vec());
        }
        TrainMode::OursLearnW => {
            let dev = dev.ok_or(Error::Empty {
                what: "development set",
            })?;
            let w = stage2_class_weights(train, config)?;
            let final_w =
                train_ours_learn_w(&mut state, model, train, dev, test, &w, config, config.t2)?;
            class_weights = Some(w.weights().to_vec());
            learned = Some(final_w);
        }
    }

    // Final row unless the cadence already produced one at this step.
    if state.metrics.last().map(|m| m.step) != Some(state.step) {
        state.flush_metric_row(model, test, config)?;
    }

    Ok(RunResult {
        final_params: state.params,
        metrics: state.metrics,
        eps_log: state.eps_log,
        min_total_weight: state.min_weight.min(),
        l2rw_weight_sums: state.l2rw_weight_sums,
        trajectory: state.trajectory,
        class_weights,
        learned_class_weights: learned,
    })
}
