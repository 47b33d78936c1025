//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 runtime failure (including failed gradient checks),
//! 2 invalid configuration or usage.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_dump_samples, cmd_eval, cmd_gradcheck, cmd_train, csv_points, pgm_grid, pixel_byte,
    write_samples, EVAL_FILE, FINAL_CHECKPOINT, GRID_COLUMNS, HISTORY_FILE,
};
pub use config::{ExperimentConfig, KEYS};

use crate::error::{Error, Result};

/// Environment variable capping worker threads. Unset or 0 runs single-threaded.
pub const THREADS_ENV: &str = "DIREAL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "direal",
    version,
    about = "Diversity-regularized GAN experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a GAN and write history.csv, checkpoints and sample dumps.
    Train(CommonArgs),
    /// Finite-difference checks of the diversity and model gradients.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Perturbs one analytic gradient entry so the checks must fail.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Metrics for a checkpoint as JSON lines.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write generator samples as CSV (2-D data) or a PGM grid (images).
    DumpSamples {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Output file; the extension is chosen from the sample kind.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// File values, then `--set` overrides, then `--seed`/`--out`; paths resolved last.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.resolve_paths()?;
    Ok(cfg)
}

pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::config(THREADS_ENV, format!("expected a thread count, got {v:?}"))),
        _ => Ok(0),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = resolve_config(&common)?;
            cmd_train(&cfg, threads_from_env()?)
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => cmd_gradcheck(&resolve_config(&common)?, corrupt_gradient).map(|_| ()),
        Command::Eval { common, checkpoint } => {
            let cfg = resolve_config(&common)?;
            cmd_eval(&cfg, &checkpoint).map(|_| ())
        }
        Command::DumpSamples {
            checkpoint,
            n,
            out,
            seed,
        } => cmd_dump_samples(&checkpoint, n, &out, seed).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
