//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::Rng;

use beable_core::beables::BeableOperator;
use beable_core::linalg::{random, CMatrix, CVector, C64};
use beable_core::verification::{
    average_consistency, ensemble_equivariance, single_beable_levelset, trajectory_rng, two_state_solution,
    CellSampler, TwoStateOracle,
};
use beable_core::{
    diagonalize, integrate_at_times, integrate_trajectory, validate_commuting_set, LambdaConfig, Operator,
    QuantumState, Symmetrization, Tolerances, TrajectoryStatus, VelocityField,
};
use beable_sim::config::{build_model, Model};
use beable_sim::presets;
use beable_sim::verify::{
    levelset_errors, max_continuity_residual, max_probability_sum_error, max_reversibility_error,
};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn model(name: &str) -> Model {
    build_model(&presets::get(name).expect("shipped preset")).expect("preset validates")
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_beable-sim")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

/// Continuity residual at 100 random interior points per preset.
fn continuity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for name in presets::NAMES {
        let (r, n) = max_continuity_residual(&model(name), 100, SEED, 1e-5).unwrap();
        assert_eq!(n, 100);
        worst = worst.max(r);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("max residual {worst:.2e} <= 1e-6 over 4 presets x 100 points, {} (< 10 s)", secs(elapsed)),
    )
}

/// Ensemble histograms against the Born rule with 10^4 trajectories.
fn equivariance() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();

    let start = Instant::now();
    let rabi = model("two-state-rabi");
    let times = [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];
    let report =
        ensemble_equivariance(&rabi.field, &rabi.state, 10_000, &times, SEED, &rabi.tolerances).unwrap();
    let up = report.cells.iter().position(|c| c == &[1]).unwrap();
    let gap = times
        .iter()
        .enumerate()
        .map(|(k, t)| (report.empirical_fraction(k, up) - (t / 2.0).cos().powi(2)).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    passed &= gap <= 0.015 && elapsed < Duration::from_secs(120);
    parts.push(format!("two-state-rabi max |f - cos^2(t/2)| {gap:.4} <= 0.015 ({})", secs(elapsed)));

    for name in ["two-qubit", "number-operator"] {
        let start = Instant::now();
        let m = model(name);
        let times = m.config.run.probe_times();
        let report = ensemble_equivariance(&m.field, &m.state, 10_000, &times, SEED, &m.tolerances).unwrap();
        let tv = report.tv_distance.iter().copied().fold(0.0, f64::max);
        let elapsed = start.elapsed();
        passed &= tv <= 0.03 && elapsed < Duration::from_secs(120);
        parts.push(format!(
            "{name} max TV {tv:.4} <= 0.03 at {} times, {} aborts ({})",
            times.len(),
            report.node_aborted_count,
            secs(elapsed)
        ));
    }
    outcome(passed, parts.join("; "))
}

/// A random single-beable system; even `k` gives a degenerate beable.
fn random_single_beable(k: u64) -> (VelocityField, QuantumState) {
    let mut rng = trajectory_rng(SEED, 1000 + k);
    let dim = rng.random_range(2..=8);
    let xi = if k.is_multiple_of(2) {
        let u = diagonalize(&random::hermitian(&mut rng, dim)).unwrap().eigenvectors().clone();
        let d = CVector::from_fn(dim, |_, _| C64::new(rng.random_range(0..3) as f64, 0.0));
        Operator::hermitian(&u * CMatrix::from_diagonal(&d) * u.adjoint()).unwrap()
    } else {
        random::hermitian(&mut rng, dim)
    };
    let b = BeableOperator::from_hermitian("xi", &xi, 1e-9, None).unwrap();
    let field = VelocityField::new(
        validate_commuting_set(vec![b]).unwrap(),
        diagonalize(&random::hermitian(&mut rng, dim)).unwrap(),
        Symmetrization::SymmetricAverage,
        1e-12,
    )
    .unwrap();
    (field, random::state(&mut rng, dim))
}

/// Integrated single-beable trajectories against the level-set solution, and
/// the two-state sign formula against integrated cell occupancy.
fn oracle_agreement() -> Outcome {
    let tol = Tolerances::default();
    let mut dev: f64 = 0.0;
    let mut aborted = 0;
    for k in 0..20 {
        let (field, state) = random_single_beable(k);
        let b = &field.set().beables()[0];
        let sampler = CellSampler::new(&state, field.set()).unwrap();
        for i in 0..3 {
            let lambda0 = sampler.sample(&mut trajectory_rng(SEED, 100 * k + i));
            let traj = integrate_trajectory(&field, &state, &lambda0, 10.0, 0.1, &tol).unwrap();
            if traj.status != TrajectoryStatus::Completed {
                aborted += 1;
            }
            for s in &traj.samples {
                let oracle = single_beable_levelset(&state, b, field.propagator(), lambda0[0], s.t).unwrap();
                dev = dev.max((oracle - s.lambdas[0]).abs());
            }
        }
    }

    let rabi = model("two-state-rabi");
    let mut rng = trajectory_rng(SEED, 7);
    let (mut disagreements, mut compared) = (0, 0);
    for _ in 0..1000 {
        let xi0: f64 = rng.random_range(-1.0..1.0);
        let t: f64 = rng.random_range(0.0..10.0);
        let oracle = TwoStateOracle::rabi(1.0, xi0).unwrap();
        if (oracle.expectation(t) - xi0).abs() <= 1e-4 {
            continue;
        }
        // Starting in spin up, lambda0 in cell 1 has level lambda0 - 1/2 = (1 - xi0) / 2.
        let lambda0 = LambdaConfig::new(vec![0.5 + (1.0 - xi0) / 2.0]);
        let traj = integrate_at_times(&rabi.field, &rabi.state, &lambda0, &[t], &rabi.tolerances).unwrap();
        compared += 1;
        if traj.samples[0].xis[0] != two_state_solution(&oracle, t) {
            disagreements += 1;
        }
    }
    outcome(
        dev <= 1e-5 && aborted == 0 && disagreements == 0,
        format!(
            "level-set max |dlambda| {dev:.2e} <= 1e-5 over 20 systems ({aborted} aborts); \
             sign formula {disagreements} disagreements at {compared} points"
        ),
    )
}

/// Midpoint average of the sign formula over xi0 reproduces <sigma_z>(t).
fn average() -> Outcome {
    let oracle = TwoStateOracle::rabi(1.0, 0.0).unwrap();
    let worst = (0..10)
        .map(|k| {
            let t = k as f64 * 10.0 / 9.0;
            (average_consistency(&oracle, t, 1000).unwrap() - t.cos()).abs()
        })
        .fold(0.0, f64::max);
    outcome(worst <= 3e-3, format!("max |avg - cos(t)| {worst:.2e} <= 3e-3 at 10 times, 1000 xi0"))
}

fn read_outputs(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect()
}

/// Seeded runs are bit-identical; forward-then-backward returns to lambda(0).
fn determinism_reversibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = true;
    for name in presets::NAMES {
        let cfg = tmp.path().join(format!("{name}.json"));
        assert!(run_cli(&["preset", name, "--out", cfg.to_str().unwrap()]).status.success());
        let cfg = cfg.to_str().unwrap();
        let mut sims = Vec::new();
        let mut ens = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{name}-sim-{rep}"));
            let o = run_cli(&["simulate", "--config", cfg, "--seed", "42", "--out", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            sims.push(read_outputs(&out, &["trajectory.csv", "trajectory.json"]));
            let out = tmp.path().join(format!("{name}-ens-{rep}"));
            let o = run_cli(&[
                "ensemble", "--config", cfg, "--trajectories", "200", "--seed", "42", "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            ens.push(read_outputs(&out, &["ensemble.json", "ensemble_long.csv"]));
        }
        identical &= sims[0] == sims[1] && ens[0] == ens[1];
    }

    let mut worst: f64 = 0.0;
    let mut completed = 0;
    for name in presets::NAMES {
        let mut m = model(name);
        m.tolerances = Tolerances::new(1e-9, 1e-11);
        let (err, n) = max_reversibility_error(&m, 20, SEED).unwrap();
        worst = worst.max(err);
        completed += n;
    }
    outcome(
        identical && worst <= 1e-6 && completed == 80,
        format!(
            "seeded simulate/ensemble outputs identical: {identical}; \
             max round-trip |dlambda| {worst:.2e} <= 1e-6 ({completed}/80 trajectories)"
        ),
    )
}

/// Probabilities sum to one; the single-beable level value is conserved.
fn conservation() -> Outcome {
    let mut sum_err: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for name in presets::NAMES {
        let mut m = model(name);
        m.config.run.t_final = 10.0;
        let mut times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        times.extend(m.config.run.probe_times());
        sum_err = sum_err.max(max_probability_sum_error(&m, &times).unwrap());
        if let Some((_, d)) = levelset_errors(&m, 5, SEED).unwrap() {
            drift = drift.max(d);
        }
    }
    outcome(
        sum_err <= 1e-8 && drift <= 1e-6,
        format!("max |sum P - 1| {sum_err:.2e} <= 1e-8; max level drift {drift:.2e} <= 1e-6 over t in [0, 10]"),
    )
}

/// Invalid models are rejected with exit code 1 and the offenders named.
fn validation_gates() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (
            "non-commuting",
            r#"{"dimension": 2, "hamiltonian": "sigma_x",
                "beables": [{"label": "spin_z", "operator": "sigma_z"}, {"label": "spin_x", "operator": "sigma_x"}],
                "initial_state": {"basis": 0}}"#,
            vec!["`spin_z`", "`spin_x`", "do not commute"],
        ),
        (
            "non-hermitian",
            r#"{"dimension": 2, "hamiltonian": [[[0,0],[1,0]],[[0,0],[0,0]]],
                "beables": [{"operator": "sigma_z"}], "initial_state": {"basis": 0}}"#,
            vec!["hamiltonian is not Hermitian"],
        ),
        (
            "unnormalized",
            r#"{"dimension": 2, "hamiltonian": "sigma_x",
                "beables": [{"operator": "sigma_z"}], "initial_state": [[1,0],[1,0]]}"#,
            vec!["initial_state is not normalized"],
        ),
    ];
    let mut failures = Vec::new();
    for (name, text, needles) in &cases {
        let cfg = tmp.path().join(format!("{name}.json"));
        fs::write(&cfg, text).unwrap();
        let cfg = cfg.to_str().unwrap();
        let out = tmp.path().join(name);
        let out = out.to_str().unwrap();
        for args in [
            vec!["simulate", "--config", cfg, "--seed", "1", "--out", out],
            vec!["ensemble", "--config", cfg, "--trajectories", "100", "--out", out],
            vec!["verify", "--config", cfg],
        ] {
            let o = run_cli(&args);
            let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
            if o.status.code() != Some(1) || !needles.iter().all(|n| text.contains(n)) {
                failures.push(format!("{name}/{} exit {:?}", args[0], o.status.code()));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "3 invalid models x 3 subcommands rejected with exit 1, offenders named".into()
        } else {
            format!("unexpected: {}", failures.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("continuity residual", continuity),
        ("Born-rule equivariance", equivariance),
        ("single-beable oracle agreement", oracle_agreement),
        ("average consistency", average),
        ("determinism and reversibility", determinism_reversibility),
        ("conservation", conservation),
        ("validation gates", validation_gates),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "{} criterion {} ({name}): {} [{}]",
            if result.passed { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            secs(start.elapsed())
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
