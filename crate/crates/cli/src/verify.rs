//! Invariant checks behind `beable-sim verify`.

use rand::Rng;
use serde::Serialize;

use beable_core::dynamics::cell_distribution;
use beable_core::linalg::expectation;
use beable_core::verification::{
    average_consistency, continuity_residual, ensemble_equivariance, level_value, single_beable_levelset,
    trajectory_rng, two_state_solution, CellSampler, TwoStateOracle,
};
use beable_core::{evolve, integrate_at_times, integrate_trajectory, LambdaConfig, TrajectoryStatus};

use crate::config::Model;
use crate::{CliError, SCHEMA_VERSION};

pub const CONTINUITY_THRESHOLD: f64 = 1e-6;
pub const PROBABILITY_SUM_TOL: f64 = 1e-8;
pub const REVERSIBILITY_TOL: f64 = 1e-6;
pub const LEVELSET_TOL: f64 = 1e-5;
pub const LEVEL_DRIFT_TOL: f64 = 1e-6;
pub const AVERAGE_TOL: f64 = 3e-3;
pub const FD_STEP: f64 = 1e-5;
/// Distance from a flip instant inside which the sign formula is not compared.
pub const FLIP_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Check {
    fn measured(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if value <= threshold { Status::Pass } else { Status::Fail },
            value: Some(value),
            threshold: Some(threshold),
            detail: detail.into(),
        }
    }

    fn skipped(name: &str, detail: &str) -> Self {
        Self {
            name: name.into(),
            status: Status::Skipped,
            value: None,
            threshold: None,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    fn new(checks: Vec<Check>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            passed: checks.iter().all(|c| c.status != Status::Fail),
            checks,
        }
    }
}

/// Report for a config that failed validation; each issue becomes a failed check.
pub fn validation_report(issues: &[String]) -> VerifyReport {
    let checks = issues
        .iter()
        .map(|issue| {
            let name = if issue.contains("commute") {
                "commutation"
            } else if issue.contains("Hermitian") {
                "hermiticity"
            } else if issue.contains("normalized") {
                "normalization"
            } else {
                "validation"
            };
            Check {
                name: name.into(),
                status: Status::Fail,
                value: None,
                threshold: None,
                detail: issue.clone(),
            }
        })
        .collect();
    VerifyReport::new(checks)
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub strict: bool,
    pub continuity_threshold: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            strict: false,
            continuity_threshold: CONTINUITY_THRESHOLD,
        }
    }
}

pub fn verify_model(model: &Model, opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    let seed = model.config.run.seed;
    let mut checks = vec![Check {
        name: "validation".into(),
        status: Status::Pass,
        value: None,
        threshold: None,
        detail: "Hermitian Hamiltonian, commuting Hermitian beables, normalized state".into(),
    }];

    let times = check_times(model, 41);
    checks.push(Check::measured(
        "probability_sum",
        max_probability_sum_error(model, &times)?,
        PROBABILITY_SUM_TOL,
        format!("max |sum P - 1| over {} times", times.len()),
    ));

    let (residual, points) = max_continuity_residual(model, 100, seed, FD_STEP)?;
    checks.push(Check::measured(
        "continuity",
        residual,
        opts.continuity_threshold,
        format!("max |dP/dt + div J| at {points} interior points, h = {FD_STEP:e}"),
    ));

    let (rev, completed) = max_reversibility_error(model, 5, seed)?;
    checks.push(Check::measured(
        "reversibility",
        rev,
        REVERSIBILITY_TOL,
        format!("max |lambda(0) - back(forward(lambda(0)))| over {completed} trajectories"),
    ));

    match levelset_errors(model, 3, seed)? {
        Some((dev, drift)) => {
            checks.push(Check::measured(
                "levelset_agreement",
                dev,
                LEVELSET_TOL,
                "max |lambda_integrated - lambda_levelset| on the output grid",
            ));
            checks.push(Check::measured(
                "level_drift",
                drift,
                LEVEL_DRIFT_TOL,
                "max |<t|L(lambda(t))|t> - L0| on the output grid",
            ));
        }
        None => {
            checks.push(Check::skipped("levelset_agreement", "needs exactly one beable"));
            checks.push(Check::skipped("level_drift", "needs exactly one beable"));
        }
    }

    match sign_formula_disagreements(model, 20, seed)? {
        Some((bad, compared)) => checks.push(Check::measured(
            "sign_formula",
            bad as f64,
            0.0,
            format!("disagreements among {compared} samples away from flip instants"),
        )),
        None => checks.push(Check::skipped("sign_formula", "needs one two-state beable with values -1, +1")),
    }

    match average_consistency_error(model, 10, 1000)? {
        Some(err) => checks.push(Check::measured(
            "average_consistency",
            err,
            AVERAGE_TOL,
            "max |mean over xi0 of xi(t) - <xi>(t)| at 10 times, 1000 xi0 values",
        )),
        None => checks.push(Check::skipped(
            "average_consistency",
            "needs one two-state beable with values -1, +1",
        )),
    }

    if opts.strict {
        let (tv, bound, aborted) = ensemble_tv(model, 1000, seed)?;
        checks.push(Check::measured(
            "ensemble_tv",
            tv,
            bound,
            format!("max TV distance, 1000 trajectories, {aborted} node aborts"),
        ));
    }
    Ok(VerifyReport::new(checks))
}

fn time_span(model: &Model) -> (f64, f64) {
    let t = model.config.run.t_final;
    (t.min(0.0), t.max(0.0))
}

fn check_times(model: &Model, n: usize) -> Vec<f64> {
    let (lo, hi) = time_span(model);
    let mut times: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    times.extend(model.config.run.probe_times());
    times
}

pub fn max_probability_sum_error(model: &Model, times: &[f64]) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for &t in times {
        let s = evolve(&model.state, model.field.propagator(), t)?;
        let total: f64 = cell_distribution(&s, model.field.set())?.iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    Ok(worst)
}

/// Largest continuity residual over `points` random interior points of
/// `[0, t_final] x domain`; returns the residual and the number of points.
pub fn max_continuity_residual(model: &Model, points: usize, seed: u64, h: f64) -> Result<(f64, usize), CliError> {
    let mut rng = trajectory_rng(seed, u64::MAX);
    let (lo, hi) = time_span(model);
    let set = model.field.set();
    let mut worst: f64 = 0.0;
    let mut evaluated = 0;
    let mut attempts = 0;
    while evaluated < points {
        attempts += 1;
        if attempts > 1000 * points.max(1) {
            return Err(CliError::Numeric("could not find interior points for the continuity check".into()));
        }
        let t = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let lambdas = LambdaConfig::new(set.beables().iter().map(|b| rng.random_range(-0.5..b.upper())).collect());
        let state = evolve(&model.state, model.field.propagator(), t)?;
        if let Some(r) = continuity_residual(&model.field, &state, &lambdas, h)? {
            worst = worst.max(r);
            evaluated += 1;
        }
    }
    Ok((worst, evaluated))
}

/// Integrates `n` sampled trajectories to `t_final` and back.
/// Returns the largest return error and the number of trajectories that completed.
pub fn max_reversibility_error(model: &Model, n: usize, seed: u64) -> Result<(f64, usize), CliError> {
    let sampler = CellSampler::new(&model.state, model.field.set())?;
    let t_final = model.config.run.t_final;
    let end_state = evolve(&model.state, model.field.propagator(), t_final)?;
    let mut worst: f64 = 0.0;
    let mut completed = 0;
    for i in 0..n {
        let lambda0 = sampler.sample(&mut trajectory_rng(seed, i as u64));
        let fwd = integrate_at_times(&model.field, &model.state, &lambda0, &[t_final], &model.tolerances)?;
        if fwd.status != TrajectoryStatus::Completed {
            continue;
        }
        let end = &fwd.samples.last().expect("completed run has a sample").lambdas;
        let back = integrate_at_times(&model.field, &end_state, end, &[model.state.time()], &model.tolerances)?;
        if back.status != TrajectoryStatus::Completed {
            continue;
        }
        let returned = &back.samples.last().expect("completed run has a sample").lambdas;
        for (a, b) in lambda0.iter().zip(returned.iter()) {
            worst = worst.max((a - b).abs());
        }
        completed += 1;
    }
    Ok((worst, completed))
}

/// For a single beable: the largest gap between integrated and level-set
/// trajectories, and the largest drift of the level value. `None` if L != 1.
pub fn levelset_errors(model: &Model, n: usize, seed: u64) -> Result<Option<(f64, f64)>, CliError> {
    let set = model.field.set();
    if set.len() != 1 {
        return Ok(None);
    }
    let b = &set.beables()[0];
    let prop = model.field.propagator();
    let sampler = CellSampler::new(&model.state, set)?;
    let (mut dev, mut drift) = (0.0_f64, 0.0_f64);
    for i in 0..n {
        let lambda0 = sampler.sample(&mut trajectory_rng(seed, i as u64));
        let level0 = level_value(&model.state, b, lambda0[0])?;
        let traj = integrate_trajectory(
            &model.field,
            &model.state,
            &lambda0,
            model.config.run.t_final,
            model.config.run.output_dt,
            &model.tolerances,
        )?;
        for s in &traj.samples {
            let oracle = single_beable_levelset(&model.state, b, prop, lambda0[0], s.t)?;
            dev = dev.max((oracle - s.lambdas[0]).abs());
            let state = evolve(&model.state, prop, s.t)?;
            drift = drift.max((level_value(&state, b, s.lambdas[0])? - level0).abs());
        }
    }
    Ok(Some((dev, drift)))
}

fn is_two_state(model: &Model) -> bool {
    let set = model.field.set();
    set.len() == 1 && {
        let ev = set.beables()[0].eigenvalues();
        ev.len() == 2 && (ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12
    }
}

/// Compares integrated beable values with `sign(<xi>(t) - xi0)` on the output
/// grid of `n` sampled trajectories. Returns (disagreements, samples compared).
pub fn sign_formula_disagreements(model: &Model, n: usize, seed: u64) -> Result<Option<(usize, usize)>, CliError> {
    if !is_two_state(model) {
        return Ok(None);
    }
    let set = model.field.set();
    let b = &set.beables()[0];
    let prop = model.field.propagator();
    let sampler = CellSampler::new(&model.state, set)?;
    let (mut bad, mut compared) = (0, 0);
    for i in 0..n {
        let lambda0 = sampler.sample(&mut trajectory_rng(seed, i as u64));
        let xi0 = 1.0 - 2.0 * level_value(&model.state, b, lambda0[0])?;
        let traj = integrate_trajectory(
            &model.field,
            &model.state,
            &lambda0,
            model.config.run.t_final,
            model.config.run.output_dt,
            &model.tolerances,
        )?;
        for s in &traj.samples {
            let mean = expectation(&evolve(&model.state, prop, s.t)?, b.operator())?.re;
            if (mean - xi0).abs() <= FLIP_MARGIN {
                continue;
            }
            let oracle = TwoStateOracle::with_curve(1.0, xi0.clamp(-1.0, 1.0), move |_| mean)?;
            compared += 1;
            if two_state_solution(&oracle, s.t) != s.xis[0] {
                bad += 1;
            }
        }
    }
    Ok(Some((bad, compared)))
}

/// Largest gap between the `xi0`-average of the sign formula and `<xi>(t)`.
pub fn average_consistency_error(model: &Model, n_times: usize, n_xi0: usize) -> Result<Option<f64>, CliError> {
    if !is_two_state(model) {
        return Ok(None);
    }
    let b = &model.field.set().beables()[0];
    let (lo, hi) = time_span(model);
    let mut worst: f64 = 0.0;
    for k in 0..n_times {
        let t = lo + (hi - lo) * k as f64 / (n_times.max(2) - 1) as f64;
        let mean = expectation(&evolve(&model.state, model.field.propagator(), t)?, b.operator())?.re;
        let oracle = TwoStateOracle::with_curve(1.0, 0.0, move |_| mean)?;
        worst = worst.max((average_consistency(&oracle, t, n_xi0)? - mean).abs());
    }
    Ok(Some(worst))
}

/// Largest TV distance of an `n`-trajectory ensemble at the probe times,
/// the sampling-noise bound `3 sqrt(C / n)`, and the node-abort count.
pub fn ensemble_tv(model: &Model, n: usize, seed: u64) -> Result<(f64, f64, usize), CliError> {
    let report = ensemble_equivariance(
        &model.field,
        &model.state,
        n,
        &model.config.run.probe_times(),
        seed,
        &model.tolerances,
    )?;
    let tv = report.tv_distance.iter().copied().fold(0.0, f64::max);
    let bound = 3.0 * (report.cells.len() as f64 / report.n_completed.max(1) as f64).sqrt();
    Ok((tv, bound, report.node_aborted_count))
}
