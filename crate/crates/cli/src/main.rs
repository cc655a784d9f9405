//! `hgr`: synthetic data, preprocessing, per-subject training, evaluation
//! and reporting over run directories.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 65 malformed input,
//! 66 missing input, 70 training divergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hgr_core::dataset::Scope;
use hgr_core::{Error, LossMode, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "hgr",
    version,
    about = "sEMG gesture recognition with dual-path transformers"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check canonical `.emg` files (or directories of them).
    ConvertValidate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Write a deterministic synthetic dataset.
    Synth(SynthArgs),
    /// Filter, normalize, segment and split; write per-subject summaries.
    Preprocess(PreprocessArgs),
    /// Train one model per subject and evaluate it.
    Train(TrainArgs),
    /// Re-evaluate the checkpoints of a run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV (default RUN/eval.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired signed-rank tests of one variant against others.
    Stats {
        /// metrics.csv files to pool.
        #[arg(long, required = true, value_delimiter = ',')]
        metrics: Vec<PathBuf>,
        #[arg(long = "ref")]
        reference: Variant,
        #[arg(long, required = true, value_delimiter = ',')]
        against: Vec<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Positional-embedding cosine similarity heatmaps of a run.
    Possim {
        #[arg(long)]
        run: PathBuf,
    },
    /// Render a markdown report from metrics files.
    Report {
        #[arg(long, required = true, value_delimiter = ',')]
        metrics: Vec<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<Variant>,
        /// Heatmap files to list in the report.
        #[arg(long, value_delimiter = ',')]
        heatmap: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    subjects: u32,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 6)]
    reps: u16,
    /// Seconds per movement repetition.
    #[arg(long, default_value_t = 0.6)]
    duration_s: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessFlags {
    #[arg(long, default_value_t = 1.0)]
    cutoff_hz: f64,
    #[arg(long, default_value_t = 255.0)]
    mu: f64,
    #[arg(long, default_value_t = 10)]
    step_ms: u32,
    #[arg(long)]
    zero_phase: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    filter_orders: Vec<usize>,
}

#[derive(Debug, Args)]
struct SplitFlags {
    #[arg(long, default_value = "db2")]
    scope: Scope,
    #[arg(long, value_delimiter = ',', default_value = "1,3,4,6")]
    train_reps: Vec<u16>,
    #[arg(long, value_delimiter = ',', default_value = "2,5")]
    test_reps: Vec<u16>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Window length in milliseconds.
    #[arg(long, default_value_t = 200)]
    window: u32,
    #[command(flatten)]
    preprocess: PreprocessFlags,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Take every setting from this manifest; other run flags are ignored.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = Variant::Huge)]
    variant: Variant,
    /// Window length in milliseconds.
    #[arg(long, default_value_t = 200)]
    window: u32,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    preprocess: PreprocessFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    weight_decay: f64,
    #[arg(long, default_value_t = LossMode::ThreeTerm)]
    loss: LossMode,
    /// Subjects trained in parallel (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 66,
        Error::Format(_) | Error::Corrupt { .. } => 65,
        Error::Divergence { .. } => 70,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hgr: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
