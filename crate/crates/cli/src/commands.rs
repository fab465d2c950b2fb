//! The four subcommands: make-data, train, eval, ablate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use longtail_core::data::{
    compute_imbalance_factor, holdout_dev, make_long_tailed, LabeledDataset, SynthGaussian,
};
use longtail_core::eval::{confusion, epsilon_summary, top_k_error};
use longtail_core::model::Model;
use longtail_core::tensor::Tensor;
use longtail_core::trainer::{run_training, RunResult, TrainMode};
use longtail_core::ParamVector;

use crate::checkpoint;
use crate::config::{parse_arm, Arm, ExperimentConfig};
use crate::formats::{self, DataFormat};
use crate::outputs;

/// Train/dev/test splits plus provenance for the manifest.
pub struct DataBundle {
    pub train: LabeledDataset,
    pub dev: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
}

impl DataBundle {
    pub fn input_dims(&self) -> usize {
        self.train.example_shape().iter().product()
    }
}

/// Materialize the `[data]` section. Synthetic data is generated in memory,
/// deterministically from the seed; `dir` sources load splits written by
/// `make-data`. `imbalance_override` regenerates synthetic data at another
/// factor (used by ablation sweeps).
pub fn load_data(
    config: &ExperimentConfig,
    seed: u64,
    imbalance_override: Option<f64>,
) -> Result<DataBundle> {
    let d = &config.data;
    match d.source.as_str() {
        "synth" => {
            let classes = d.classes.context("missing config key [data] classes")?;
            let dims = d.dims.context("missing config key [data] dims")?;
            let base = d
                .base_count
                .context("missing config key [data] base_count")?;
            let sep = d
                .class_separation
                .context("missing config key [data] class_separation")?;
            let imbalance = imbalance_override
                .or(d.imbalance_factor)
                .context("missing config key [data] imbalance_factor")?;
            let dev_per_class = d.dev_per_class.unwrap_or(0);
            let test_per_class = d.test_per_class.unwrap_or(0);

            let gen = SynthGaussian::new(classes, dims, sep, seed)?;
            let pool = gen.long_tailed(base, imbalance)?;
            let (train, dev) = if dev_per_class > 0 {
                let (t, dv) = holdout_dev(&pool, dev_per_class, seed)?;
                (t, Some(dv))
            } else {
                (pool, None)
            };
            let test = if test_per_class > 0 {
                Some(gen.balanced(test_per_class, "test")?)
            } else {
                None
            };
            Ok(DataBundle { train, dev, test })
        }
        "dir" => {
            if imbalance_override.is_some() {
                bail!("imbalance_factors sweeps need [data] source = \"synth\" (file-backed data has a fixed factor)");
            }
            let dir = d.dir.as_ref().context("missing config key [data] dir")?;
            let format = DataFormat::parse(d.format.as_deref().unwrap_or("csv"))?;
            let load = |name: &str| -> Result<Option<LabeledDataset>> {
                let path = dir.join(format.split_filename(name));
                if path.exists() {
                    Ok(Some(formats::ingest(&path, format, None)?))
                } else {
                    Ok(None)
                }
            };
            let train = load("train")?
                .with_context(|| format!("no train split under {}", dir.display()))?;
            Ok(DataBundle {
                train,
                dev: load("dev")?,
                test: load("test")?,
            })
        }
        other => bail!("unknown [data] source '{other}' (want \"synth\" or \"dir\")"),
    }
}

/// Run one experiment: build the model from the config, train in the given
/// mode, return the result plus the model spec for checkpointing.
pub fn run_one(
    config: &ExperimentConfig,
    mode: TrainMode,
    pretrain: bool,
    imbalance_override: Option<f64>,
    seed: u64,
) -> Result<(RunResult, Model, DataBundle)> {
    run_one_opts(config, mode, pretrain, imbalance_override, None, seed)
}

/// [`run_one`] with a per-run τ override (ablation arms tune τ separately).
pub fn run_one_opts(
    config: &ExperimentConfig,
    mode: TrainMode,
    pretrain: bool,
    imbalance_override: Option<f64>,
    tau_override: Option<f64>,
    seed: u64,
) -> Result<(RunResult, Model, DataBundle)> {
    let bundle = load_data(config, seed, imbalance_override)?;
    let loss = config.loss_kind(bundle.train.class_counts())?;
    let spec = config.model_spec(bundle.input_dims(), bundle.train.num_classes(), seed)?;
    let model = Model::new(spec)?;
    let mut train_config = config.train_config(mode, loss, bundle.train.len(), seed)?;
    if !pretrain {
        train_config.t1 = 0;
        train_config.stage_switch_at_first_decay = false;
    }
    if let Some(tau) = tau_override {
        train_config.tau = tau;
        train_config.validate()?;
    }

    let train_set = reshape_for_model(&bundle.train, &model)?;
    let dev_set = bundle
        .dev
        .as_ref()
        .map(|d| reshape_for_model(d, &model))
        .transpose()?;
    let test_set = bundle
        .test
        .as_ref()
        .map(|t| reshape_for_model(t, &model))
        .transpose()?;

    let result = run_training(
        &model,
        &train_set,
        dev_set.as_ref(),
        test_set.as_ref(),
        &train_config,
    )?;
    Ok((result, model, bundle))
}

/// View flat features under the model's input shape (CNNs over csv data).
fn reshape_for_model(ds: &LabeledDataset, model: &Model) -> Result<LabeledDataset> {
    let want = &model.spec().input_shape;
    if ds.example_shape() == &want[..] {
        return Ok(ds.clone());
    }
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(want);
    let features = ds.features().clone().with_shape(shape)?;
    Ok(LabeledDataset::new(
        features,
        ds.labels().to_vec(),
        ds.num_classes(),
    )?)
}

/// Forward a whole split in chunks, collecting logits.
pub fn batched_logits(model: &Model, params: &ParamVector, ds: &LabeledDataset) -> Result<Tensor> {
    let chunk = 256;
    let k = model.num_classes();
    let mut data = Vec::with_capacity(ds.len() * k);
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let indices: Vec<usize> = (start..end).collect();
        let batch = ds.batch(&indices)?;
        let logits = model.logits_with(params, &batch.features)?;
        data.extend_from_slice(logits.data());
        start = end;
    }
    Ok(Tensor::from_vec(vec![ds.len(), k], data)?)
}

// ── make-data ────────────────────────────────────────────────────────

pub struct MakeDataArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub dev_per_class: usize,
    pub imbalance_factor: f64,
    pub export_format: DataFormat,
    pub source: MakeDataSource,
}

pub enum MakeDataSource {
    Synth {
        classes: usize,
        dims: usize,
        base_count: usize,
        class_separation: f64,
        test_per_class: usize,
    },
    Files {
        input: PathBuf,
        format: DataFormat,
        labels: Option<PathBuf>,
        test_input: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

pub fn cmd_make_data(args: &MakeDataArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let (pool, test) = match &args.source {
        MakeDataSource::Synth {
            classes,
            dims,
            base_count,
            class_separation,
            test_per_class,
        } => {
            let gen = SynthGaussian::new(*classes, *dims, *class_separation, args.seed)?;
            let pool = gen.long_tailed(*base_count, args.imbalance_factor)?;
            let test = if *test_per_class > 0 {
                Some(gen.balanced(*test_per_class, "test")?)
            } else {
                None
            };
            (pool, test)
        }
        MakeDataSource::Files {
            input,
            format,
            labels,
            test_input,
            test_labels,
        } => {
            let full = formats::ingest(input, *format, labels.as_deref())?;
            let pool = make_long_tailed(&full, args.imbalance_factor, args.seed)?;
            let test = test_input
                .as_ref()
                .map(|p| formats::ingest(p, *format, test_labels.as_deref()))
                .transpose()?;
            (pool, test)
        }
    };

    let (train, dev) = if args.dev_per_class > 0 {
        let (t, d) = holdout_dev(&pool, args.dev_per_class, args.seed)?;
        (t, Some(d))
    } else {
        (pool, None)
    };

    let mut hasher = Sha256::new();
    let mut write_split = |name: &str, ds: &LabeledDataset| -> Result<()> {
        let path = args.out.join(args.export_format.split_filename(name));
        formats::export(ds, &path, args.export_format, None)?;
        hasher.update(std::fs::read(&path)?);
        Ok(())
    };
    write_split("train", &train)?;
    if let Some(d) = &dev {
        write_split("dev", d)?;
    }
    if let Some(t) = &test {
        write_split("test", t)?;
    }
    let data_hash = hex::encode(hasher.finalize());

    let manifest = manifest_toml(&train, dev.as_ref(), test.as_ref(), args, &data_hash)?;
    outputs::write_atomic(&args.out.join("manifest.toml"), manifest.as_bytes())?;
    println!(
        "wrote {} ({} train / {} dev / {} test), data hash {}",
        args.out.display(),
        train.len(),
        dev.map(|d| d.len()).unwrap_or(0),
        test.map(|t| t.len()).unwrap_or(0),
        &data_hash[..12]
    );
    Ok(())
}

fn manifest_toml(
    train: &LabeledDataset,
    dev: Option<&LabeledDataset>,
    test: Option<&LabeledDataset>,
    args: &MakeDataArgs,
    data_hash: &str,
) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("seed = {}\n", args.seed));
    out.push_str(&format!(
        "imbalance_factor_requested = {}\n",
        args.imbalance_factor
    ));
    out.push_str(&format!(
        "imbalance_factor_achieved = {}\n",
        compute_imbalance_factor(train)?
    ));
    out.push_str(&format!("data_hash = \"{data_hash}\"\n"));
    let mut split = |name: &str, ds: &LabeledDataset| {
        out.push_str(&format!("\n[splits.{name}]\n"));
        out.push_str(&format!("total = {}\n", ds.len()));
        out.push_str(&format!("num_classes = {}\n", ds.num_classes()));
        out.push_str(&format!("class_counts = {:?}\n", ds.class_counts()));
    };
    split("train", train);
    if let Some(d) = dev {
        split("dev", d);
    }
    if let Some(t) = test {
        split("test", t);
    }
    Ok(out)
}

// ── train ────────────────────────────────────────────────────────────

pub fn cmd_train(config_path: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::from_path(config_path)?;
    let mode = config.mode()?;
    let seed = config.seed();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let (result, model, bundle) = run_one(&config, mode, true, None, seed)?;
    write_run_outputs(
        out,
        &config.hash,
        seed,
        &result,
        &model,
        bundle.test.as_ref(),
    )?;
    checkpoint::save_atomic(
        &out.join("checkpoint.bin"),
        model.spec(),
        &result.final_params,
        Some(&config.hash),
        Some(seed),
    )?;

    if let Some(row) = result.metrics.last() {
        println!(
            "{}: step {} train_loss {:.4} top1 {:.4} top3 {:.4} top5 {:.4} min_weight {:.4}",
            mode.name(),
            row.step,
            row.train_loss,
            row.top1,
            row.top3,
            row.top5,
            result.min_total_weight
        );
    }
    Ok(())
}

fn write_run_outputs(
    out: &Path,
    config_hash: &str,
    seed: u64,
    result: &RunResult,
    model: &Model,
    test: Option<&LabeledDataset>,
) -> Result<()> {
    let k = model.num_classes();
    outputs::write_atomic(
        &out.join("metrics.csv"),
        &outputs::metrics_csv(&result.metrics, k, config_hash),
    )?;
    let summary = epsilon_summary(&result.eps_log, k);
    outputs::write_atomic(
        &out.join("eps_diagnostics.csv"),
        &outputs::epsilon_csv(&summary, result.min_total_weight, config_hash),
    )?;
    if let Some(test) = test {
        let test = reshape_for_model(test, model)?;
        let logits = batched_logits(model, &result.final_params, &test)?;
        let cm = confusion(&logits, test.labels())?;
        outputs::write_atomic(
            &out.join("confusion.csv"),
            &outputs::confusion_csv(&cm, config_hash),
        )?;
    }

    let mut summary_toml = String::new();
    summary_toml.push_str(&format!("config_hash = \"{config_hash}\"\n"));
    summary_toml.push_str(&format!("seed = {seed}\n"));
    if let Some(row) = result.metrics.last() {
        summary_toml.push_str(&format!("mode = \"{}\"\n", row.mode.name()));
        summary_toml.push_str(&format!("steps = {}\n", row.step));
        summary_toml.push_str(&format!("final_train_loss = {}\n", row.train_loss));
        if row.top1.is_finite() {
            summary_toml.push_str(&format!("final_top1_error = {}\n", row.top1));
            summary_toml.push_str(&format!("final_top3_error = {}\n", row.top3));
            summary_toml.push_str(&format!("final_top5_error = {}\n", row.top5));
        }
    }
    if result.min_total_weight.is_finite() {
        summary_toml.push_str(&format!("min_total_weight = {}\n", result.min_total_weight));
    }
    if let Some(w) = &result.class_weights {
        summary_toml.push_str(&format!("class_weights = {w:?}\n"));
    }
    if let Some(w) = &result.learned_class_weights {
        summary_toml.push_str(&format!("learned_class_weights = {w:?}\n"));
    }
    outputs::write_atomic(&out.join("summary.toml"), summary_toml.as_bytes())?;
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

pub fn cmd_eval(
    checkpoint_path: &Path,
    data_path: &Path,
    format: DataFormat,
    labels: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (model, meta) = checkpoint::load(checkpoint_path)?;
    let ds = formats::ingest(data_path, format, labels)?;
    let ds = reshape_for_model(&ds, &model)?;
    if ds.num_classes() > model.num_classes() {
        bail!(
            "data has {} classes but the checkpoint was trained with {}",
            ds.num_classes(),
            model.num_classes()
        );
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let logits = batched_logits(&model, &model.get_params(), &ds)?;
    let k = model.num_classes();
    let top1 = top_k_error(&logits, ds.labels(), 1)?;
    let top3 = top_k_error(&logits, ds.labels(), 3.min(k))?;
    let top5 = top_k_error(&logits, ds.labels(), 5.min(k))?;
    let cm = confusion(&logits, ds.labels())?;

    let hash = meta.config_hash.as_deref().unwrap_or("unknown");
    outputs::write_atomic(
        &out.join("confusion.csv"),
        &outputs::confusion_csv(&cm, hash),
    )?;
    let mut report = String::new();
    report.push_str(&format!("config_hash = \"{hash}\"\n"));
    if let Some(seed) = meta.seed {
        report.push_str(&format!("seed = {seed}\n"));
    }
    report.push_str(&format!("checkpoint = \"{}\"\n", checkpoint_path.display()));
    report.push_str(&format!("data = \"{}\"\n", data_path.display()));
    report.push_str(&format!("examples = {}\n", ds.len()));
    report.push_str(&format!("top1_error = {top1}\n"));
    report.push_str(&format!("top3_error = {top3}\n"));
    report.push_str(&format!("top5_error = {top5}\n"));
    outputs::write_atomic(&out.join("eval.toml"), report.as_bytes())?;

    println!(
        "top1 {top1:.4} top3 {top3:.4} top5 {top5:.4} over {} examples",
        ds.len()
    );
    Ok(())
}

// ── ablate ───────────────────────────────────────────────────────────

struct AblateRun {
    arm: &'static str,
    imbalance: f64,
    seed: u64,
    top1: f64,
    top3: f64,
    top5: f64,
    min_total_weight: f64,
    l2rw_sums_ok: bool,
}

pub fn cmd_ablate(config_path: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::from_path(config_path)?;
    let section = config.ablate_section()?.clone();
    if section.arms.is_empty() || section.seeds.is_empty() {
        bail!("[ablate] needs non-empty arms and seeds");
    }
    let arms: Vec<Arm> = section
        .arms
        .iter()
        .map(|name| parse_arm(name))
        .collect::<Result<_, _>>()?;
    let factors: Vec<Option<f64>> = match &section.imbalance_factors {
        Some(fs) if !fs.is_empty() => fs.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut runs: Vec<AblateRun> = Vec::new();
    for factor in &factors {
        for arm in &arms {
            for &seed in &section.seeds {
                let tau_override = section.tau.as_ref().and_then(|t| t.get(arm.name)).copied();
                let (result, model, bundle) =
                    run_one_opts(&config, arm.mode, arm.pretrain, *factor, tau_override, seed)?;
                let achieved = compute_imbalance_factor(&bundle.train)?;
                let label = factor
                    .map(|f| format!("if{f:.0}"))
                    .unwrap_or_else(|| format!("if{achieved:.0}"));
                let run_dir = out.join(format!("runs/{label}_{}_seed{seed}", arm.name));
                std::fs::create_dir_all(&run_dir)?;
                write_run_outputs(
                    &run_dir,
                    &config.hash,
                    seed,
                    &result,
                    &model,
                    bundle.test.as_ref(),
                )?;

                let row = result.metrics.last().context("run produced no metrics")?;
                let sums_ok = result
                    .l2rw_weight_sums
                    .iter()
                    .all(|&s| (s - 1.0).abs() < 1e-9 || s == 0.0);
                runs.push(AblateRun {
                    arm: arm.name,
                    imbalance: factor.unwrap_or(achieved),
                    seed,
                    top1: row.top1,
                    top3: row.top3,
                    top5: row.top5,
                    min_total_weight: result.min_total_weight,
                    l2rw_sums_ok: sums_ok,
                });
                println!(
                    "{label} {} seed {seed}: top1 {:.4} (min weight {:.4})",
                    arm.name, row.top1, result.min_total_weight
                );
            }
        }
    }

    // Per-run table.
    let mut per_run = String::new();
    per_run.push_str(&format!("# config_hash = {}\n", config.hash));
    per_run.push_str("arm,imbalance_factor,seed,top1_error,top3_error,top5_error,min_total_weight,l2rw_sums_ok\n");
    for r in &runs {
        per_run.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.arm,
            r.imbalance,
            r.seed,
            r.top1,
            r.top3,
            r.top5,
            if r.min_total_weight.is_finite() {
                format!("{}", r.min_total_weight)
            } else {
                String::new()
            },
            r.l2rw_sums_ok
        ));
    }
    outputs::write_atomic(&out.join("runs.csv"), per_run.as_bytes())?;

    // Table-5-shaped summary: rows = arms, columns = imbalance factors,
    // cells = median top-1 error over seeds.
    let mut cell: BTreeMap<(&str, u64), Vec<f64>> = BTreeMap::new();
    let mut factor_keys: Vec<u64> = Vec::new();
    for r in &runs {
        let fk = r.imbalance.to_bits();
        if !factor_keys.contains(&fk) {
            factor_keys.push(fk);
        }
        cell.entry((r.arm, fk)).or_default().push(r.top1);
    }
    let mut summary = String::new();
    summary.push_str(&format!("# config_hash = {}\n", config.hash));
    summary.push_str("arm");
    for &fk in &factor_keys {
        summary.push_str(&format!(",if_{}", f64::from_bits(fk)));
    }
    summary.push('\n');
    for arm in &arms {
        summary.push_str(arm.name);
        for &fk in &factor_keys {
            summary.push(',');
            if let Some(values) = cell.get(&(arm.name, fk)) {
                summary.push_str(&format!("{}", median(values)));
            }
        }
        summary.push('\n');
    }
    outputs::write_atomic(&out.join("summary.csv"), summary.as_bytes())?;
    println!("summary written to {}", out.join("summary.csv").display());
    Ok(())
}

/// Median of an unsorted, non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }
}
