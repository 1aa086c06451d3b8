use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use beable_core::verification::{ensemble_equivariance, sample_initial};
use beable_core::{integrate_trajectory, LambdaConfig, TrajectoryStatus};

use crate::config::{build_model, parse_config, to_json, Model, ModelConfig};
use crate::output::{ensemble_long_csv, pretty_json, trajectory_csv, unix_now, EnsembleDocument, OutputDir, TrajectorySummary};
use crate::verify::{validation_report, verify_model, VerifyOptions};
use crate::{presets, CliError, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, EXIT_VERIFICATION, SCHEMA_VERSION};

pub fn load_config(path: &Path) -> Result<ModelConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    build_model(&load_config(path)?)
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub lambda0: Option<Vec<f64>>,
    pub t_final: Option<f64>,
    pub output_dt: Option<f64>,
    pub out: PathBuf,
}

/// Writes `trajectory.csv`, `trajectory.json` and `manifest.json`.
/// A node abort still writes the partial trajectory and exits with code 2.
pub fn simulate(args: &SimulateArgs) -> Result<u8, CliError> {
    let started = unix_now();
    let mut config = load_config(&args.config)?;
    if let Some(t) = args.t_final {
        config.run.t_final = t;
    }
    if let Some(dt) = args.output_dt {
        config.run.output_dt = dt;
    }
    let model = build_model(&config)?;
    let set = model.field.set();

    let (lambda0, seed) = match &args.lambda0 {
        Some(values) => {
            let lambdas = LambdaConfig::new(values.clone());
            set.cells_of(&lambdas)
                .map_err(|e| CliError::validation(format!("--lambda0: {e}")))?;
            (lambdas, None)
        }
        None => {
            let seed = args.seed.unwrap_or(config.run.seed);
            (sample_initial(&model.state, set, seed)?, Some(seed))
        }
    };
    let mut traj = integrate_trajectory(
        &model.field,
        &model.state,
        &lambda0,
        config.run.t_final,
        config.run.output_dt,
        &model.tolerances,
    )?;
    traj.seed = seed;

    let mut out = OutputDir::create(&args.out)?;
    out.write("trajectory.csv", &trajectory_csv(&traj, set.len()))?;
    out.write(
        "trajectory.json",
        &pretty_json(&TrajectorySummary {
            schema_version: SCHEMA_VERSION,
            labels: model.labels(),
            lambda0: &lambda0,
            trajectory: &traj,
        }),
    )?;
    out.finish(
        "simulate",
        &config,
        seed,
        json!({ "lambda0": lambda0.0, "t_final": config.run.t_final, "output_dt": config.run.output_dt }),
        started,
    )?;

    if let Some(node) = &traj.abort {
        eprintln!(
            "node reached at t = {}: P{:?} = {:.3e}; partial trajectory written",
            node.time, node.cells, node.probability
        );
        return Ok(EXIT_NUMERIC);
    }
    debug_assert_eq!(traj.status, TrajectoryStatus::Completed);
    Ok(EXIT_OK)
}

#[derive(Debug, Clone)]
pub struct EnsembleArgs {
    pub config: PathBuf,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
    pub times: Option<Vec<f64>>,
    pub out: PathBuf,
}

/// Writes `ensemble.json`, `ensemble_long.csv` and `manifest.json`.
/// Exits with code 2 if any trajectory hit a node.
pub fn ensemble(args: &EnsembleArgs) -> Result<u8, CliError> {
    let started = unix_now();
    let mut config = load_config(&args.config)?;
    if let Some(n) = args.trajectories {
        config.run.n_trajectories = n;
    }
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(times) = &args.times {
        config.run.times = times.clone();
    }
    if config.run.n_trajectories < 100 {
        return Err(CliError::validation(format!(
            "an ensemble needs at least 100 trajectories, got {}",
            config.run.n_trajectories
        )));
    }
    let model = build_model(&config)?;
    let times = config.run.probe_times();
    let report = ensemble_equivariance(
        &model.field,
        &model.state,
        config.run.n_trajectories,
        &times,
        config.run.seed,
        &model.tolerances,
    )?;

    let mut out = OutputDir::create(&args.out)?;
    out.write(
        "ensemble.json",
        &pretty_json(&EnsembleDocument {
            schema_version: SCHEMA_VERSION,
            labels: model.labels(),
            report: &report,
        }),
    )?;
    out.write("ensemble_long.csv", &ensemble_long_csv(&report))?;
    out.finish(
        "ensemble",
        &config,
        Some(config.run.seed),
        json!({ "n_trajectories": config.run.n_trajectories, "times": times }),
        started,
    )?;

    if report.node_aborted_count > 0 {
        eprintln!(
            "{} of {} trajectories reached a node and were excluded",
            report.node_aborted_count, report.n_trajectories
        );
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}

/// Prints the JSON report. Exit 1 if the config is invalid, 3 if a check fails.
pub fn verify(path: &Path, strict: bool, continuity_threshold: f64, out: Option<&Path>) -> Result<u8, CliError> {
    let config = load_config(path)?;
    let (report, failure_code) = match build_model(&config) {
        Ok(model) => (
            verify_model(
                &model,
                &VerifyOptions {
                    strict,
                    continuity_threshold,
                },
            )?,
            EXIT_VERIFICATION,
        ),
        Err(CliError::Validation(issues)) => (validation_report(&issues), EXIT_VALIDATION),
        Err(e) => return Err(e),
    };
    let text = pretty_json(&report);
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, &text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(if report.passed { EXIT_OK } else { failure_code })
}

pub fn preset(name: &str, dense: bool, out: Option<&Path>) -> Result<u8, CliError> {
    let mut config = presets::get(name).ok_or_else(|| CliError::validation(format!("unknown preset `{name}`")))?;
    if dense {
        config = presets::densified(&config).map_err(CliError::validation)?;
    }
    let mut text = to_json(&config);
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}
