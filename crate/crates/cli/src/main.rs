//! `qseld`: synthesize B-format datasets, train and evaluate quaternion SELD
//! models, write per-frame predictions and run gradient checks.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Parser, Subcommand};

use commands::{Baseline, SplitArg};
use config::{usage, UsageError, SEED_ENV};

#[derive(Parser)]
#[command(name = "qseld", version, about = "Quaternion CNN for sound event localization and detection")]
struct Cli {
    /// TOML config file; keys mirror the `config.toml` written to each run.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Master seed (same as `--set seed=N`); falls back to QSELD_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Parent directory of run outputs.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,

    /// Run directory suffix; defaults to the command name.
    #[arg(long, global = true)]
    tag: Option<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic B-format dataset.
    Synth {
        /// Dataset directory; defaults to `dataset/` inside the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the train split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `real` trains the real-valued baseline with the same data and seed.
        #[arg(long, value_enum, default_value_t = Baseline::Quaternion)]
        baseline: Baseline,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Score the reference labels against themselves.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Write per-frame activity and direction predictions as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A 4-channel B-format WAV file.
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        wav: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Restrict to one layer or loss (qconv2d, qdense, activation,
        /// batchnorm, pool, bigru, dense, conv2d, bce, mse, model).
        #[arg(long)]
        layer: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Predict { .. } => "predict",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut sets = cli.sets;
    if let Some(s) = cli.seed {
        sets.push(format!("seed={s}"));
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut cfg = config::resolve(cli.config.as_deref(), &sets, env_seed.as_deref())?;
    let tag = cli.tag.unwrap_or_else(|| cli.command.name().to_string());
    let runs = cli.runs_dir.as_path();
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, runs, &tag, out),
        Command::Train { data, baseline } => commands::train_cmd(&mut cfg, runs, &tag, &data, baseline),
        Command::Eval { checkpoint, data, split, ground_truth } => {
            commands::eval(&cfg, runs, &tag, checkpoint.as_deref(), &data, split, ground_truth)
        }
        Command::Predict { checkpoint, wav, data, split } => {
            commands::predict(&cfg, runs, &tag, &checkpoint, wav.as_deref(), data.as_deref(), split)
        }
        Command::Gradcheck { layer } => commands::gradcheck(&cfg, runs, &tag, layer.as_deref()),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.downcast_ref::<UsageError>().is_some()
        || matches!(err.downcast_ref::<qseld_core::Error>(), Some(qseld_core::Error::Config(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
