//! Command-line front end for lavino: `degrade`, `restore`, `evaluate`,
//! `verify` and `slice`.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
//! failure, 3 failed verification.

pub mod commands;
pub mod config;
pub mod metadata;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use lavino::verify::VerifyOptions;

use crate::commands::Overrides;
use crate::config::{ExperimentConfig, FieldError};

pub const THREADS_ENV: &str = "LAVINO_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} verification check(s) failed")]
    Verification(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<lavino::Error> for CliError {
    fn from(e: lavino::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "lavino", version, about = "Zero-shot video restoration")]
pub struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the noise seed (degrade) or sampler seed (restore).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, or output file for evaluate and slice.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the problem operator and noise to `paths.input`.
    Degrade,
    /// Restore a measurement with the configured sampler.
    Restore,
    /// PSNR and SSIM of a restored video against a reference.
    Evaluate { restored: PathBuf, reference: PathBuf },
    /// Adjoint, CG and TV prox self-checks.
    Verify {
        #[arg(long, hide = true)]
        break_adjoint: bool,
    },
    /// Write the (row, frame) image at a fixed column.
    Slice {
        video: PathBuf,
        #[arg(long)]
        column: usize,
    },
}

fn require_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    Ok(ExperimentConfig::load(path)?)
}

/// Sizes the global rayon pool from `LAVINO_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Validation(format!("{THREADS_ENV}: expected a positive integer, got '{v}'")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let ov = Overrides {
        seed: cli.seed,
        output: cli.output.clone(),
    };
    match &cli.command {
        Command::Degrade => {
            commands::cmd_degrade(&require_config(cli)?, &ov)?;
        }
        Command::Restore => {
            commands::cmd_restore(&require_config(cli)?, &ov)?;
        }
        Command::Evaluate {
            restored,
            reference,
        } => {
            commands::cmd_evaluate(restored, reference, cli.output.as_deref())?;
        }
        Command::Verify { break_adjoint } => {
            let mut opts = VerifyOptions {
                break_adjoint: *break_adjoint,
                ..Default::default()
            };
            if cli.config.is_some() {
                opts.seeds = require_config(cli)?.verify_seeds;
            }
            commands::cmd_verify(&opts)?;
        }
        Command::Slice { video, column } => {
            let out = cli
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("slice_{column:05}.png")));
            commands::cmd_slice(video, *column, &out)?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
