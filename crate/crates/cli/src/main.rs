mod commands;
mod io;
mod svg;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use icattn::icnet::NetError;
use icattn::sis::SisError;
use icattn::trainer::TrainError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Inference compilation with attention: train proposal networks, run
/// importance sampling, diagnose circuit faults.
#[derive(Debug, Parser)]
#[command(name = "icattn", version)]
pub struct Cli {
    /// Directory for every artifact of this run.
    #[arg(long, global = true, env = "ICATTN_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// magnitude, resistor, circuit or conjugate.
    #[arg(long)]
    pub model: Option<String>,
    /// TOML model config (`model = "..."` plus that model's keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Magnitude model: number of nuisance latents.
    #[arg(long)]
    pub nuisance: Option<usize>,
    /// Magnitude model: likelihood std.
    #[arg(long)]
    pub sigma_l: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct ObserveArgs {
    /// Observed value as `name=value` (or a bare value, in order). Repeatable.
    #[arg(long = "observe")]
    pub observe: Vec<String>,
    /// CSV of observations: `freq,re,im` rows (circuit) or a header of
    /// observation names followed by one row per observation vector.
    #[arg(long)]
    pub observe_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an inference network on prior traces.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// ff, ff-att, lstm or lstm-att.
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 600_000)]
        traces: u64,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        /// Comma-separated `threshold:lr` pairs keyed by traces seen.
        #[arg(long, default_value = "0:1e-3,200000:1e-4,400000:1e-5")]
        lr_schedule: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lstm_hidden: Option<usize>,
        /// Mixture components for Normal-prior sites (1 = plain Normal).
        #[arg(long)]
        normal_components: Option<usize>,
        /// Prior traces used to estimate observation standardization.
        #[arg(long, default_value_t = 1024)]
        pilot: usize,
        /// Checkpoint path (default: <out-dir>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Importance sampling with a trained network or the prior.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        observe: ObserveArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `prior` for likelihood weighting without a network.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value_t = 2000)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Posterior fault probabilities for the circuit model.
    Diagnose {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        observe: ObserveArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Average attention weights over guided runs.
    AttentionReport {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        observe: ObserveArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Site (`address` or `address#instance`) for the heatmap; default is the last.
        #[arg(long)]
        site: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw prior traces and write their observations and latents.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-execute a run from its manifest into `--out-dir`.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Marks errors caused by bad invocation (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<SisError>() {
            if matches!(e, SisError::Degenerate | SisError::NonFinite(_)) {
                return 3;
            }
        }
        if let Some(TrainError::Diverged { .. }) = cause.downcast_ref::<TrainError>() {
            return 3;
        }
        if let Some(NetError::NonFinite(_)) = cause.downcast_ref::<NetError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
