//! `beable-sim`: config-driven runs of beable trajectory simulations.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure or node abort,
//! 3 verification failure.

pub mod commands;
pub mod config;
pub mod output;
pub mod presets;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use beable_core::ErrorKind;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<beable_core::Error> for CliError {
    fn from(e: beable_core::Error) -> Self {
        match e.kind() {
            ErrorKind::Input => CliError::validation(e.to_string()),
            ErrorKind::Numeric | ErrorKind::Node => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "beable-sim", version, about = "Beable trajectory simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Sample the initial configuration from the quantum distribution.
        #[arg(long, conflicts_with = "lambda0")]
        seed: Option<u64>,
        /// Explicit initial configuration, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda0: Option<Vec<f64>>,
        #[arg(long, allow_hyphen_values = true)]
        t_final: Option<f64>,
        #[arg(long)]
        output_dt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ensemble and compare its cell histogram with the quantum distribution.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        times: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant checks and print a JSON pass/fail report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Also run a 1000-trajectory ensemble check.
        #[arg(long)]
        strict: bool,
        /// Largest accepted continuity residual.
        #[arg(long, default_value_t = verify::CONTINUITY_THRESHOLD)]
        continuity_threshold: f64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a shipped model config.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(presets::NAMES))]
        name: String,
        /// Write operators and state as dense arrays.
        #[arg(long)]
        dense: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            lambda0,
            t_final,
            output_dt,
            out,
        } => commands::simulate(&commands::SimulateArgs {
            config,
            seed,
            lambda0,
            t_final,
            output_dt,
            out,
        }),
        Command::Ensemble {
            config,
            trajectories,
            seed,
            times,
            out,
        } => commands::ensemble(&commands::EnsembleArgs {
            config,
            trajectories,
            seed,
            times,
            out,
        }),
        Command::Verify {
            config,
            strict,
            continuity_threshold,
            out,
        } => commands::verify(&config, strict, continuity_threshold, out.as_deref()),
        Command::Preset { name, dense, out } => commands::preset(&name, dense, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Applies `BEABLE_SIM_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BEABLE_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation(format!("BEABLE_SIM_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Numeric(format!("could not start worker pool: {e}")))
}
