//! End-to-end command flows through the library entry points: data
//! preparation, training, evaluation, and the ablation sweep.

use std::fs;
use std::path::Path;

use longtail_cli::commands::{
    batched_logits, cmd_ablate, cmd_eval, cmd_make_data, cmd_train, median, MakeDataArgs,
    MakeDataSource,
};
use longtail_cli::config::ExperimentConfig;
use longtail_cli::formats::DataFormat;

fn synth_make_args(out: &Path, seed: u64) -> MakeDataArgs {
    MakeDataArgs {
        out: out.to_path_buf(),
        seed,
        dev_per_class: 2,
        imbalance_factor: 8.0,
        export_format: DataFormat::Csv,
        source: MakeDataSource::Synth {
            classes: 4,
            dims: 6,
            base_count: 40,
            class_separation: 6.0,
            test_per_class: 10,
        },
    }
}

fn read_manifest_value(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("{key} missing from manifest"))
        .split('=')
        .nth(1)
        .unwrap()
        .trim()
        .to_string()
}

#[test]
fn make_data_writes_splits_and_deterministic_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cmd_make_data(&synth_make_args(&out_a, 3)).unwrap();
    cmd_make_data(&synth_make_args(&out_b, 3)).unwrap();

    for name in ["train.csv", "dev.csv", "test.csv", "manifest.toml"] {
        assert!(out_a.join(name).exists(), "{name} missing");
    }
    let hash_a = read_manifest_value(&out_a.join("manifest.toml"), "data_hash");
    let hash_b = read_manifest_value(&out_b.join("manifest.toml"), "data_hash");
    assert_eq!(hash_a, hash_b, "same seed must give identical data hashes");

    let out_c = dir.path().join("c");
    cmd_make_data(&synth_make_args(&out_c, 4)).unwrap();
    let hash_c = read_manifest_value(&out_c.join("manifest.toml"), "data_hash");
    assert_ne!(hash_a, hash_c, "different seeds must differ");

    // Head/tail ratio in the manifest matches the requested factor: the
    // pool is 40 -> 5 per class (ratio 8) before the 2-per-class holdout,
    // leaving 38/3 afterwards.
    let achieved: f64 =
        read_manifest_value(&out_a.join("manifest.toml"), "imbalance_factor_achieved")
            .parse()
            .unwrap();
    assert!((achieved - 38.0 / 3.0).abs() < 1e-12, "achieved {achieved}");

    // Balanced manifest at IF = 1.
    let out_d = dir.path().join("d");
    let mut args = synth_make_args(&out_d, 3);
    args.imbalance_factor = 1.0;
    cmd_make_data(&args).unwrap();
    let achieved = read_manifest_value(&out_d.join("manifest.toml"), "imbalance_factor_achieved");
    assert_eq!(achieved, "1");
}

const TRAIN_CONFIG: &str = r#"
[data]
source = "synth"
classes = 4
dims = 6
imbalance_factor = 8.0
base_count = 40
class_separation = 6.0
dev_per_class = 2
test_per_class = 10

[model]
kind = "mlp"
hidden = [8]

[train]
mode = "ours"
loss = "cross_entropy"
eta = 0.05
tau = 1.0
t1_epochs = 2
t2_epochs = 2
batch_size = 16
seed = 5
"#;

#[test]
fn train_writes_all_outputs_and_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, TRAIN_CONFIG).unwrap();
    let out = dir.path().join("run");
    cmd_train(&config_path, &out).unwrap();

    for name in [
        "metrics.csv",
        "eps_diagnostics.csv",
        "confusion.csv",
        "checkpoint.bin",
        "summary.toml",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }

    // Config hash stamped into every text output.
    let config = ExperimentConfig::from_path(&config_path).unwrap();
    for name in ["metrics.csv", "eps_diagnostics.csv", "confusion.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.contains(&config.hash), "{name} lacks the config hash");
    }
    let summary = fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!(summary.contains(&config.hash));
    assert!(summary.contains("seed = 5"));

    // The checkpoint reproduces the trained model's predictions.
    let (model, meta) = longtail_cli::checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(meta.config_hash.as_deref(), Some(config.hash.as_str()));
    assert_eq!(meta.seed, Some(5));
    let bundle = longtail_cli::commands::load_data(&config, 5, None).unwrap();
    let test = bundle.test.unwrap();
    let logits = batched_logits(&model, &model.get_params(), &test).unwrap();
    assert_eq!(logits.shape(), &[test.len(), 4]);
}

#[test]
fn eval_reads_a_checkpoint_against_an_exported_split() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    cmd_make_data(&synth_make_args(&data_dir, 7)).unwrap();

    // Train against the directory source.
    let config_text = format!(
        r#"
[data]
source = "dir"
dir = "{}"
format = "csv"

[model]
kind = "mlp"
hidden = [8]

[train]
mode = "class_balanced"
loss = "cross_entropy"
eta = 0.05
t1_epochs = 1
t2_epochs = 1
batch_size = 16
seed = 1
"#,
        data_dir.display()
    );
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, &config_text).unwrap();
    let run_dir = dir.path().join("run");
    cmd_train(&config_path, &run_dir).unwrap();

    let eval_dir = dir.path().join("eval");
    cmd_eval(
        &run_dir.join("checkpoint.bin"),
        &data_dir.join("test.csv"),
        DataFormat::Csv,
        None,
        &eval_dir,
    )
    .unwrap();
    assert!(eval_dir.join("confusion.csv").exists());
    let report = fs::read_to_string(eval_dir.join("eval.toml")).unwrap();
    assert!(report.contains("top1_error"));
    assert!(report.contains("config_hash"));
    assert!(
        report.contains("seed = 1"),
        "eval metadata must echo the training seed"
    );
}

const ABLATE_CONFIG: &str = r#"
[data]
source = "synth"
classes = 4
dims = 6
imbalance_factor = 8.0
base_count = 40
class_separation = 6.0
dev_per_class = 2
test_per_class = 10

[model]
kind = "mlp"
hidden = [8]

[train]
loss = "cross_entropy"
eta = 0.05
tau = 1.0
t1_epochs = 1
t2_epochs = 1
batch_size = 16
seed = 1

[ablate]
arms = ["vanilla", "l2rw", "l2rw_pretrain", "ours"]
seeds = [1, 2, 3]
"#;

#[test]
fn ablate_emits_table_shaped_summary_and_per_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("ablate.toml");
    fs::write(&config_path, ABLATE_CONFIG).unwrap();
    let out = dir.path().join("sweep");
    cmd_ablate(&config_path, &out).unwrap();

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 4, "header plus one row per arm: {summary}");
    assert!(rows[0].starts_with("arm,if_"));
    for (row, arm) in rows[1..]
        .iter()
        .zip(["vanilla", "l2rw", "l2rw_pretrain", "ours"])
    {
        assert!(
            row.starts_with(arm),
            "row order mirrors the arm list: {row}"
        );
    }

    // Medians in the summary equal a brute-force median over the per-run rows.
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let mut by_arm: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for line in runs
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("arm,"))
    {
        let f: Vec<&str> = line.split(',').collect();
        by_arm
            .entry(f[0].to_string())
            .or_default()
            .push(f[3].parse().unwrap());
        assert_eq!(
            f[7], "true",
            "l2rw postprocessed weights must sum to 1 or 0: {line}"
        );
    }
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let expect = median(&by_arm[f[0]]);
        let got: f64 = f[1].parse().unwrap();
        assert!(
            (got - expect).abs() < 1e-12,
            "{}: summary {got} vs recomputed {expect}",
            f[0]
        );
    }

    // Per-run outputs exist (Fig. 3/4-style data).
    let runs_root = out.join("runs");
    let entries: Vec<_> = fs::read_dir(&runs_root).unwrap().collect();
    assert_eq!(entries.len(), 12, "4 arms × 3 seeds");
    for entry in entries {
        let p = entry.unwrap().path();
        assert!(p.join("metrics.csv").exists());
        assert!(p.join("confusion.csv").exists());
        assert!(p.join("eps_diagnostics.csv").exists());
    }
}

#[test]
fn idx_export_round_trips_through_a_dir_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("idxdata");
    let mut args = synth_make_args(&data, 2);
    args.export_format = DataFormat::Idx;
    cmd_make_data(&args).unwrap();
    assert!(data.join("train-images-idx3-ubyte").exists());
    assert!(data.join("train-labels-idx1-ubyte").exists());

    let config_text = format!(
        "[data]\nsource = \"dir\"\ndir = \"{}\"\nformat = \"idx\"\n\n\
         [model]\nkind = \"mlp\"\nhidden = [6]\n\n\
         [train]\nmode = \"vanilla\"\nloss = \"cross_entropy\"\neta = 0.05\nt1 = 2\nt2 = 0\nbatch_size = 8\nseed = 2\n",
        data.display()
    );
    let config_path = dir.path().join("idx.toml");
    fs::write(&config_path, config_text).unwrap();
    cmd_train(&config_path, &dir.path().join("run")).unwrap();
}

#[test]
fn ablate_sweeps_multiple_imbalance_factors() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("multi.toml");
    let text = ABLATE_CONFIG.replace(
        "arms = [\"vanilla\", \"l2rw\", \"l2rw_pretrain\", \"ours\"]",
        "arms = [\"vanilla\", \"ours\"]\nimbalance_factors = [4.0, 2.0]",
    );
    fs::write(&config_path, text).unwrap();
    let out = dir.path().join("sweep");
    cmd_ablate(&config_path, &out).unwrap();

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let header = summary.lines().find(|l| l.starts_with("arm")).unwrap();
    assert_eq!(header, "arm,if_4,if_2", "one column per factor: {header}");
    let rows: Vec<&str> = summary.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows[1..] {
        assert_eq!(row.split(',').count(), 3, "every cell filled: {row}");
    }
}

#[test]
fn cnn_config_trains_on_flat_features() {
    // 16-dim synth features viewed as 4×4×1 images by the CNN.
    let config_text = r#"
[data]
source = "synth"
classes = 3
dims = 16
imbalance_factor = 4.0
base_count = 24
class_separation = 6.0
dev_per_class = 2
test_per_class = 6

[model]
kind = "small_cnn"
input_shape = [4, 4, 1]
channels = [3]
kernel = 3

[train]
mode = "ours"
loss = "cross_entropy"
eta = 0.05
tau = 1.0
t1 = 2
t2 = 2
batch_size = 8
seed = 2
"#;
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("cnn.toml");
    fs::write(&config_path, config_text).unwrap();
    let out = dir.path().join("run");
    cmd_train(&config_path, &out).unwrap();
    let (model, _) = longtail_cli::checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(model.spec().input_shape, vec![4, 4, 1]);

    // A mismatched image shape is reported against the data width.
    let bad = config_text.replace("input_shape = [4, 4, 1]", "input_shape = [3, 3, 1]");
    let bad_path = dir.path().join("bad.toml");
    fs::write(&bad_path, bad).unwrap();
    let err = cmd_train(&bad_path, &dir.path().join("run2"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("input_shape"), "{err}");
}

#[test]
fn ablate_applies_per_arm_tau_overrides() {
    use longtail_cli::commands::{run_one, run_one_opts};
    use longtail_core::trainer::TrainMode;
    let config = ExperimentConfig::from_bytes(ABLATE_CONFIG.as_bytes()).unwrap();
    let (base, _, _) = run_one(&config, TrainMode::Ours, true, None, 1).unwrap();
    let (same, _, _) = run_one_opts(&config, TrainMode::Ours, true, None, Some(1.0), 1).unwrap();
    let (hot, _, _) = run_one_opts(&config, TrainMode::Ours, true, None, Some(25.0), 1).unwrap();
    assert_eq!(base.final_params.as_slice(), same.final_params.as_slice());
    assert_ne!(base.final_params.as_slice(), hot.final_params.as_slice());
}

#[test]
fn ablate_rejects_unknown_arms_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    fs::write(
        &config_path,
        ABLATE_CONFIG.replace("\"l2rw\"", "\"mystery\""),
    )
    .unwrap();
    let err = cmd_ablate(&config_path, &dir.path().join("out"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("mystery"), "{err}");
}
