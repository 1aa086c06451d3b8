//! Shipped models.

use std::f64::consts::PI;

use crate::config::{
    resolve_operator, BeableSpec, DynamicsOptions, ModelConfig, OperatorSpec, RunOptions, StateSpec, Term,
};

pub const NAMES: [&str; 4] = ["two-state-rabi", "two-qubit", "number-operator", "pair-toy"];

pub fn get(name: &str) -> Option<ModelConfig> {
    match name {
        "two-state-rabi" => Some(two_state_rabi()),
        "two-qubit" => Some(two_qubit()),
        "number-operator" => Some(number_operator()),
        "pair-toy" => Some(pair_toy()),
        _ => None,
    }
}

fn term(coeff: f64, factors: &[&str]) -> Term {
    Term {
        coeff,
        factors: factors.iter().map(|s| s.to_string()).collect(),
    }
}

fn beable(label: &str, operator: OperatorSpec) -> BeableSpec {
    BeableSpec {
        label: Some(label.into()),
        operator,
        ordering: None,
        degeneracy_tol: None,
    }
}

/// `H = (omega/2) sigma_x`, omega = 1, beable `sigma_z`, start in spin up.
fn two_state_rabi() -> ModelConfig {
    ModelConfig {
        dimension: 2,
        hamiltonian: OperatorSpec::Terms {
            terms: vec![term(0.5, &["sigma_x"])],
        },
        beables: vec![beable("sigma_z", OperatorSpec::Named("sigma_z".into()))],
        initial_state: StateSpec::Basis { basis: 0 },
        dynamics: DynamicsOptions::default(),
        run: RunOptions {
            t_final: 10.0,
            output_dt: 0.05,
            n_trajectories: 10_000,
            seed: 42,
            times: (0..=8).map(|k| k as f64 * PI / 4.0).collect(),
        },
    }
}

/// Two spins with commuting `sigma_z` beables and an entangling Hamiltonian.
fn two_qubit() -> ModelConfig {
    let raw = [[1.0, 0.0], [0.5, 0.5], [-0.3, 0.7], [0.2, -0.4]];
    let norm = raw.iter().map(|[re, im]: &[f64; 2]| re * re + im * im).sum::<f64>().sqrt();
    ModelConfig {
        dimension: 4,
        hamiltonian: OperatorSpec::Terms {
            terms: vec![
                term(0.5, &["sigma_x", "identity:2"]),
                term(0.7, &["identity:2", "sigma_x"]),
                term(0.4, &["sigma_x", "sigma_x"]),
                term(0.3, &["sigma_z", "sigma_z"]),
                term(0.25, &["sigma_y", "sigma_y"]),
            ],
        },
        beables: vec![
            beable("z_a", OperatorSpec::Terms { terms: vec![term(1.0, &["sigma_z", "identity:2"])] }),
            beable("z_b", OperatorSpec::Terms { terms: vec![term(1.0, &["identity:2", "sigma_z"])] }),
        ],
        initial_state: StateSpec::Dense(raw.iter().map(|[re, im]| [re / norm, im / norm]).collect()),
        dynamics: DynamicsOptions::default(),
        run: RunOptions {
            t_final: 5.0,
            output_dt: 0.05,
            n_trajectories: 10_000,
            seed: 42,
            times: vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0],
        },
    }
}

/// Driven oscillator truncated to 8 levels, `H = a^dagger a + 0.6 (a + a^dagger)`,
/// beable = number operator, start in the vacuum.
fn number_operator() -> ModelConfig {
    ModelConfig {
        dimension: 8,
        hamiltonian: OperatorSpec::Terms {
            terms: vec![term(1.0, &["number"]), term(0.6, &["quadrature"])],
        },
        beables: vec![beable("n", OperatorSpec::Named("number".into()))],
        initial_state: StateSpec::Basis { basis: 0 },
        dynamics: DynamicsOptions::default(),
        run: RunOptions {
            t_final: 5.0,
            output_dt: 0.05,
            n_trajectories: 10_000,
            seed: 42,
            times: vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0],
        },
    }
}

/// Two fermionic modes, basis `|n1 n2>`. The beable is the total occupation
/// `N = diag(0, 1, 1, 2)`; the Hamiltonian creates and annihilates pairs,
/// `H = N + 0.8 (|11><00| + h.c.) + 0.5 (|01><10| + h.c.)`.
/// The cell ordering puts `N = 2` next to the vacuum.
fn pair_toy() -> ModelConfig {
    let (g, kappa) = (0.8, 0.5);
    ModelConfig {
        dimension: 4,
        hamiltonian: OperatorSpec::Terms {
            terms: vec![
                term(1.0, &["number:2", "identity:2"]),
                term(1.0, &["identity:2", "number:2"]),
                term((g + kappa) / 2.0, &["sigma_x", "sigma_x"]),
                term((kappa - g) / 2.0, &["sigma_y", "sigma_y"]),
            ],
        },
        beables: vec![BeableSpec {
            label: Some("occupation".into()),
            operator: OperatorSpec::Terms {
                terms: vec![
                    term(1.0, &["number:2", "identity:2"]),
                    term(1.0, &["identity:2", "number:2"]),
                ],
            },
            ordering: Some(vec![0, 2, 1]),
            degeneracy_tol: None,
        }],
        initial_state: StateSpec::Basis { basis: 0 },
        dynamics: DynamicsOptions::default(),
        run: RunOptions {
            t_final: 5.0,
            output_dt: 0.05,
            n_trajectories: 10_000,
            seed: 42,
            times: vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0],
        },
    }
}

/// The same model with every operator and the state written out densely.
pub fn densified(cfg: &ModelConfig) -> Result<ModelConfig, String> {
    let dense = |spec: &OperatorSpec| -> Result<OperatorSpec, String> {
        let m = resolve_operator(spec, cfg.dimension)?;
        Ok(OperatorSpec::Dense(
            m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect(),
        ))
    };
    let mut out = cfg.clone();
    out.hamiltonian = dense(&cfg.hamiltonian)?;
    for b in &mut out.beables {
        b.operator = dense(&b.operator)?;
    }
    if let StateSpec::Basis { basis } = cfg.initial_state {
        out.initial_state =
            StateSpec::Dense((0..cfg.dimension).map(|i| [if i == basis { 1.0 } else { 0.0 }, 0.0]).collect());
    }
    Ok(out)
}
