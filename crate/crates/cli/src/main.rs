use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longtail_cli::commands::{self, MakeDataArgs, MakeDataSource};
use longtail_cli::formats::DataFormat;

/// Two-component example weighting for long-tailed classification:
/// dataset preparation, training, evaluation, and ablation sweeps.
#[derive(Parser)]
#[command(name = "longtail", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build train/dev/test splits (synthetic or from files) plus a manifest.
    MakeData(MakeDataCli),
    /// Run one training configuration and write metrics, diagnostics, and a
    /// checkpoint.
    Train {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults under $LONGTAIL_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split; prints top-k errors and writes the
    /// confusion matrix.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (images file for idx).
        #[arg(long)]
        data: PathBuf,
        /// csv | cifar_binary | idx
        #[arg(long, default_value = "csv")]
        format: String,
        /// Labels file (idx only; derived from the images name by default).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Output directory (defaults under $LONGTAIL_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (arm × seed × imbalance factor) in the config's `[ablate]`
    /// section and write per-run CSVs plus a median summary table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults under $LONGTAIL_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MakeDataCli {
    /// Generate synthetic Gaussian data instead of reading files.
    #[arg(long)]
    synth: bool,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dims: usize,
    #[arg(long, default_value_t = 500)]
    base_count: usize,
    #[arg(long, default_value_t = 6.0)]
    class_separation: f64,
    /// Balanced test examples per class (synthetic only; 0 skips the split).
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,

    /// Input dataset file (non-synthetic; images file for idx).
    #[arg(long)]
    input: Option<PathBuf>,
    /// csv | cifar_binary | idx
    #[arg(long, default_value = "csv")]
    format: String,
    /// Labels file for idx input.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Optional balanced test split to ingest alongside the input.
    #[arg(long)]
    test_input: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,

    /// Head-to-tail class size ratio to subsample to.
    #[arg(long, default_value_t = 1.0)]
    imbalance_factor: f64,
    /// Balanced development examples held out per class (0 skips).
    #[arg(long, default_value_t = 10)]
    dev_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Format for the written splits.
    #[arg(long, default_value = "csv")]
    export_format: String,
    #[arg(long)]
    out: PathBuf,
}

/// Default output directory: `$LONGTAIL_OUT/<name>` when the override is
/// set (the only environment variable the tool reads), else `runs/<name>`.
fn default_out(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        std::env::var_os("LONGTAIL_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(name)
    })
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::MakeData(args) => {
            let source = if args.synth {
                MakeDataSource::Synth {
                    classes: args.classes,
                    dims: args.dims,
                    base_count: args.base_count,
                    class_separation: args.class_separation,
                    test_per_class: args.test_per_class,
                }
            } else {
                MakeDataSource::Files {
                    input: args
                        .input
                        .clone()
                        .ok_or_else(|| anyhow::anyhow!("--input is required without --synth"))?,
                    format: DataFormat::parse(&args.format)?,
                    labels: args.labels.clone(),
                    test_input: args.test_input.clone(),
                    test_labels: args.test_labels.clone(),
                }
            };
            commands::cmd_make_data(&MakeDataArgs {
                out: args.out,
                seed: args.seed,
                dev_per_class: args.dev_per_class,
                imbalance_factor: args.imbalance_factor,
                export_format: DataFormat::parse(&args.export_format)?,
                source,
            })
        }
        Command::Train { config, out } => commands::cmd_train(&config, &default_out(out, "train")),
        Command::Eval {
            checkpoint,
            data,
            format,
            labels,
            out,
        } => commands::cmd_eval(
            &checkpoint,
            &data,
            DataFormat::parse(&format)?,
            labels.as_deref(),
            &default_out(out, "eval"),
        ),
        Command::Ablate { config, out } => {
            commands::cmd_ablate(&config, &default_out(out, "ablate"))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
