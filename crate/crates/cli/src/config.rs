//! Experiment configuration: flat TOML with `[data]`, `[model]`, `[train]`,
//! and optional `[ablate]` sections. Every run is reproducible from the
//! config file plus its seed; the sha-256 of the file is stamped into every
//! output.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use longtail_core::loss::LossKind;
use longtail_core::model::ModelSpec;
use longtail_core::trainer::{LrDecay, TrainConfig, TrainMode};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn missing(section: &str, key: &str) -> ConfigError {
    ConfigError(format!("missing config key [{section}] {key}"))
}

/// `[data]`: either a synthetic generator spec or a directory of splits
/// produced by `make-data`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: String,
    // synth
    pub classes: Option<usize>,
    pub dims: Option<usize>,
    pub imbalance_factor: Option<f64>,
    pub base_count: Option<usize>,
    pub class_separation: Option<f64>,
    pub dev_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    // dir
    pub dir: Option<PathBuf>,
    pub format: Option<String>,
}

/// `[model]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub hidden: Option<Vec<usize>>,
    pub channels: Option<Vec<usize>>,
    pub kernel: Option<usize>,
    /// `[h, w, c]` for the CNN; the MLP infers its input width from data.
    pub input_shape: Option<Vec<usize>>,
}

/// `[train]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<String>,
    pub loss: Option<String>,
    pub gamma: Option<f64>,
    pub ldam_max_margin: Option<f64>,
    pub ldam_scale: Option<f64>,
    pub eta: Option<f64>,
    pub tau: Option<f64>,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub t1_epochs: Option<usize>,
    pub t2_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub dev_batch_size: Option<usize>,
    pub momentum: Option<f64>,
    /// Pairs of `[step, multiplier]`.
    pub lr_schedule: Option<Vec<(usize, f64)>>,
    pub stage_switch_at_first_decay: Option<bool>,
    pub beta: Option<f64>,
    pub normalize_class_weights: Option<bool>,
    pub ldam_class_weights: Option<bool>,
    pub eval_every: Option<usize>,
    pub seed: Option<u64>,
}

/// `[ablate]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
    /// Synthetic-data sweeps regenerate per factor; file-backed data allows
    /// exactly the dataset's own factor.
    pub imbalance_factors: Option<Vec<f64>>,
    /// Per-arm τ overrides; arms aggregate the meta-gradient differently,
    /// so one meta rate rarely suits all of them.
    pub tau: Option<std::collections::BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: DataSection,
    model: ModelSection,
    train: TrainSection,
    ablate: Option<AblateSection>,
}

/// A parsed experiment config plus the hash of its exact file bytes.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub ablate: Option<AblateSection>,
    pub hash: String,
}

/// An ablation config is an experiment config with the `[ablate]` section
/// present.
pub type AblateConfig = ExperimentConfig;

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let bytes =
            std::fs::read(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ConfigError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| ConfigError(format!("config is not utf-8: {e}")))?;
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("config parse: {e}")))?;
        let hash = hex::encode(Sha256::digest(bytes));
        Ok(Self {
            data: raw.data,
            model: raw.model,
            train: raw.train,
            ablate: raw.ablate,
            hash,
        })
    }

    /// The ablate section, required for `ablate` runs.
    pub fn ablate_section(&self) -> Result<&AblateSection, ConfigError> {
        self.ablate
            .as_ref()
            .ok_or_else(|| missing("ablate", "arms"))
    }

    /// Resolve the loss kind; LDAM pulls its margins from training counts.
    pub fn loss_kind(&self, class_counts: &[usize]) -> Result<LossKind, ConfigError> {
        let name = self.train.loss.as_deref().unwrap_or("cross_entropy");
        match name {
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "focal" => Ok(LossKind::Focal {
                gamma: self.train.gamma.unwrap_or(0.5),
            }),
            "ldam" => {
                let mut kind =
                    LossKind::ldam_default(class_counts).map_err(|e| ConfigError(e.to_string()))?;
                if let LossKind::Ldam {
                    max_margin, scale, ..
                } = &mut kind
                {
                    if let Some(m) = self.train.ldam_max_margin {
                        *max_margin = m;
                    }
                    if let Some(s) = self.train.ldam_scale {
                        *scale = s;
                    }
                }
                Ok(kind)
            }
            other => Err(ConfigError(format!("unknown loss '{other}'"))),
        }
    }

    /// Build the model spec; `input_dims` comes from the loaded data.
    pub fn model_spec(
        &self,
        input_dims: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<ModelSpec, ConfigError> {
        match self.model.kind.as_str() {
            "mlp" => Ok(ModelSpec::mlp(
                input_dims,
                self.model.hidden.clone().unwrap_or_else(|| vec![32]),
                num_classes,
                seed,
            )),
            "small_cnn" => {
                let shape = self
                    .model
                    .input_shape
                    .clone()
                    .ok_or_else(|| missing("model", "input_shape"))?;
                if shape.len() != 3 {
                    return Err(ConfigError(format!(
                        "[model] input_shape must be [h, w, c], got {shape:?}"
                    )));
                }
                if shape.iter().product::<usize>() != input_dims {
                    return Err(ConfigError(format!(
                        "[model] input_shape {shape:?} does not match data width {input_dims}"
                    )));
                }
                Ok(ModelSpec::small_cnn(
                    [shape[0], shape[1], shape[2]],
                    self.model.channels.clone().unwrap_or_else(|| vec![4]),
                    self.model.kernel.unwrap_or(3),
                    num_classes,
                    seed,
                ))
            }
            other => Err(ConfigError(format!("unknown model kind '{other}'"))),
        }
    }

    /// Assemble the core train config. Epoch-denominated stage lengths are
    /// converted with the training-set size (ceil(n / batch) steps per epoch).
    pub fn train_config(
        &self,
        mode: TrainMode,
        loss: LossKind,
        train_len: usize,
        seed: u64,
    ) -> Result<TrainConfig, ConfigError> {
        let mut c = TrainConfig::new(mode, loss);
        let t = &self.train;
        if let Some(v) = t.eta {
            c.eta = v;
        }
        if let Some(v) = t.tau {
            c.tau = v;
        }
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = t.dev_batch_size {
            c.dev_batch_size = v;
        }
        if let Some(v) = t.momentum {
            c.momentum = v;
        }
        if let Some(v) = t.beta {
            c.beta = Some(v);
        }
        if let Some(v) = t.normalize_class_weights {
            c.normalize_class_weights = v;
        }
        if let Some(v) = t.ldam_class_weights {
            c.ldam_class_weights = v;
        }
        if let Some(v) = t.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = t.stage_switch_at_first_decay {
            c.stage_switch_at_first_decay = v;
        }
        if let Some(sched) = &t.lr_schedule {
            c.lr_schedule = sched
                .iter()
                .map(|&(step, multiplier)| LrDecay { step, multiplier })
                .collect();
        }
        let steps_per_epoch = train_len.div_ceil(c.batch_size.max(1)).max(1);
        c.t1 = match (t.t1, t.t1_epochs) {
            (Some(_), Some(_)) => {
                return Err(ConfigError("set [train] t1 or t1_epochs, not both".into()))
            }
            (Some(steps), None) => steps,
            (None, Some(epochs)) => epochs * steps_per_epoch,
            (None, None) => 0,
        };
        c.t2 = match (t.t2, t.t2_epochs) {
            (Some(_), Some(_)) => {
                return Err(ConfigError("set [train] t2 or t2_epochs, not both".into()))
            }
            (Some(steps), None) => steps,
            (None, Some(epochs)) => epochs * steps_per_epoch,
            (None, None) => 0,
        };
        c.seed = seed;
        c.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(c)
    }

    pub fn mode(&self) -> Result<TrainMode, ConfigError> {
        let name = self
            .train
            .mode
            .as_deref()
            .ok_or_else(|| missing("train", "mode"))?;
        TrainMode::parse(name).ok_or_else(|| ConfigError(format!("invalid mode '{name}'")))
    }

    pub fn seed(&self) -> u64 {
        self.train.seed.unwrap_or(0)
    }
}

/// An ablation arm: a mode plus whether pretraining (stage 1) is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arm {
    pub name: &'static str,
    pub mode: TrainMode,
    pub pretrain: bool,
}

/// The Table-5-shaped ablation arms.
pub const ARMS: &[Arm] = &[
    Arm {
        name: "vanilla",
        mode: TrainMode::Vanilla,
        pretrain: true,
    },
    Arm {
        name: "class_balanced",
        mode: TrainMode::ClassBalanced,
        pretrain: true,
    },
    Arm {
        name: "l2rw",
        mode: TrainMode::L2rw,
        pretrain: false,
    },
    Arm {
        name: "l2rw_pretrain",
        mode: TrainMode::L2rw,
        pretrain: true,
    },
    Arm {
        name: "l2rw_pretrain_two_component",
        mode: TrainMode::L2rwTwoComponent,
        pretrain: true,
    },
    Arm {
        name: "ours",
        mode: TrainMode::Ours,
        pretrain: true,
    },
    Arm {
        name: "ours_learn_w",
        mode: TrainMode::OursLearnW,
        pretrain: true,
    },
];

pub fn parse_arm(name: &str) -> Result<Arm, ConfigError> {
    ARMS.iter()
        .find(|a| a.name == name)
        .copied()
        .ok_or_else(|| {
            let known: Vec<&str> = ARMS.iter().map(|a| a.name).collect();
            ConfigError(format!(
                "invalid ablation arm '{name}'; known arms: {known:?}"
            ))
        })
}
