//! Model definition files.
//!
//! A config is one JSON object. Complex numbers are `[re, im]` pairs.
//! Operators are given densely, by name (`"sigma_z"`, `"number"`), or as a
//! real linear combination of Kronecker products of named factors. A top-level
//! `"preset"` key loads a shipped model and lets the remaining keys override it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use beable_core::beables::{commutator_norm, COMMUTATION_TOL, DEFAULT_DEGENERACY_TOL};
use beable_core::dynamics::DEFAULT_NODE_FLOOR;
use beable_core::linalg::{hermitian_deviation, CMatrix, CVector, NORM_TOL};
use beable_core::{
    diagonalize, validate_commuting_set, BeableOperator, Operator, QuantumState, Symmetrization, Tolerances,
    VelocityField,
};

use crate::presets;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dimension: usize,
    pub hamiltonian: OperatorSpec,
    pub beables: Vec<BeableSpec>,
    pub initial_state: StateSpec,
    #[serde(default)]
    pub dynamics: DynamicsOptions,
    #[serde(default)]
    pub run: RunOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Named(String),
    Terms { terms: Vec<Term> },
    Dense(Vec<Vec<[f64; 2]>>),
}

/// `coeff * factors[0] (x) factors[1] (x) ...`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(default = "one")]
    pub coeff: f64,
    pub factors: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeableSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub operator: OperatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Basis { basis: usize },
    Dense(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsOptions {
    pub symmetrization: Symmetrization,
    pub rtol: f64,
    pub atol: f64,
    pub node_floor: f64,
    pub max_steps: usize,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        let tol = Tolerances::default();
        Self {
            symmetrization: Symmetrization::default(),
            rtol: tol.rtol,
            atol: tol.atol,
            node_floor: DEFAULT_NODE_FLOOR,
            max_steps: tol.max_steps,
        }
    }
}

impl DynamicsOptions {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub t_final: f64,
    pub output_dt: f64,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Ensemble probe times; empty means six evenly spaced times on `[0, t_final]`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            t_final: 10.0,
            output_dt: 0.05,
            n_trajectories: 1000,
            seed: 0,
            times: Vec::new(),
        }
    }
}

impl RunOptions {
    pub fn probe_times(&self) -> Vec<f64> {
        if !self.times.is_empty() {
            return self.times.clone();
        }
        (0..6).map(|k| self.t_final * k as f64 / 5.0).collect()
    }
}

/// Parses a config, applying a `"preset"` base if one is named.
pub fn parse_config(text: &str) -> Result<ModelConfig, CliError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("config is not valid JSON: {e}")))?;
    let Value::Object(mut user) = value else {
        return Err(CliError::validation("config must be a JSON object"));
    };
    let merged = match user.remove("preset") {
        None => Value::Object(user),
        Some(Value::String(name)) => {
            let base = presets::get(&name).ok_or_else(|| {
                CliError::validation(format!(
                    "unknown preset `{name}` (available: {})",
                    presets::NAMES.join(", ")
                ))
            })?;
            let Value::Object(mut base) = serde_json::to_value(base).expect("presets serialize") else {
                unreachable!("configs serialize to objects")
            };
            for (key, v) in user {
                match (base.get_mut(&key), v) {
                    (Some(Value::Object(section)), Value::Object(over)) if key == "dynamics" || key == "run" => {
                        section.extend(over);
                    }
                    (_, v) => {
                        base.insert(key, v);
                    }
                }
            }
            Value::Object(base)
        }
        Some(_) => return Err(CliError::validation("`preset` must be a string")),
    };
    serde_json::from_value(merged).map_err(|e| CliError::validation(format!("invalid config: {e}")))
}

pub fn to_json(config: &ModelConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

/// A validated model ready to run.
#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub field: VelocityField,
    pub state: QuantumState,
    pub tolerances: Tolerances,
}

impl Model {
    pub fn labels(&self) -> Vec<String> {
        self.field.set().beables().iter().map(|b| b.label().to_string()).collect()
    }
}

/// Checks every invariant the model feeds into and reports all violations together.
pub fn build_model(config: &ModelConfig) -> Result<Model, CliError> {
    let mut issues = Vec::new();
    let dim = config.dimension;
    if dim == 0 {
        return Err(CliError::validation("dimension must be positive"));
    }

    let hamiltonian = match resolve_operator(&config.hamiltonian, dim) {
        Ok(m) => match checked_hermitian(m) {
            Ok(op) => Some(op),
            Err(dev) => {
                issues.push(format!("hamiltonian is not Hermitian (max |H - H^dagger| = {dev:.3e})"));
                None
            }
        },
        Err(e) => {
            issues.push(format!("hamiltonian: {e}"));
            None
        }
    };

    if config.beables.is_empty() {
        issues.push("at least one beable is required".into());
    }
    let mut beables = Vec::new();
    for (i, spec) in config.beables.iter().enumerate() {
        let label = spec.label.clone().unwrap_or_else(|| format!("beable_{i}"));
        if config.beables[..i]
            .iter()
            .enumerate()
            .any(|(j, s)| s.label.clone().unwrap_or_else(|| format!("beable_{j}")) == label)
        {
            issues.push(format!("beable label `{label}` is used twice"));
        }
        let op = match resolve_operator(&spec.operator, dim) {
            Ok(m) => match checked_hermitian(m) {
                Ok(op) => op,
                Err(dev) => {
                    issues.push(format!("beable `{label}` is not Hermitian (max |A - A^dagger| = {dev:.3e})"));
                    continue;
                }
            },
            Err(e) => {
                issues.push(format!("beable `{label}`: {e}"));
                continue;
            }
        };
        let tol = spec.degeneracy_tol.unwrap_or(DEFAULT_DEGENERACY_TOL);
        match BeableOperator::from_hermitian(label.clone(), &op, tol, spec.ordering.as_deref()) {
            Ok(b) => beables.push(b),
            Err(e) => issues.push(format!("beable `{label}`: {e}")),
        }
    }
    for i in 0..beables.len() {
        for j in i + 1..beables.len() {
            let norm = commutator_norm(beables[i].operator(), beables[j].operator()).unwrap_or(f64::INFINITY);
            let scale = beables[i].operator().max_abs().max(beables[j].operator().max_abs()).max(1.0);
            if norm > COMMUTATION_TOL * scale * scale {
                issues.push(format!(
                    "beables `{}` and `{}` do not commute (max |[A, B]| = {norm:.3e})",
                    beables[i].label(),
                    beables[j].label()
                ));
            }
        }
    }

    let state = match resolve_state(&config.initial_state, dim) {
        Ok(v) => match QuantumState::new(v.clone(), 0.0) {
            Ok(s) => Some(s),
            Err(_) => {
                issues.push(format!(
                    "initial_state is not normalized (norm = {}, tolerance {NORM_TOL:e})",
                    v.norm()
                ));
                None
            }
        },
        Err(e) => {
            issues.push(format!("initial_state: {e}"));
            None
        }
    };

    let d = &config.dynamics;
    if !(d.rtol > 0.0 && d.rtol.is_finite()) {
        issues.push(format!("dynamics.rtol must be positive, got {}", d.rtol));
    }
    if !(d.atol > 0.0 && d.atol.is_finite()) {
        issues.push(format!("dynamics.atol must be positive, got {}", d.atol));
    }
    if !(d.node_floor >= 0.0 && d.node_floor.is_finite()) {
        issues.push(format!("dynamics.node_floor must be non-negative, got {}", d.node_floor));
    }
    if d.max_steps == 0 {
        issues.push("dynamics.max_steps must be positive".into());
    }
    let r = &config.run;
    if !r.t_final.is_finite() {
        issues.push(format!("run.t_final must be finite, got {}", r.t_final));
    }
    if !(r.output_dt > 0.0 && r.output_dt.is_finite()) {
        issues.push(format!("run.output_dt must be positive, got {}", r.output_dt));
    }
    if r.times.iter().any(|t| !t.is_finite()) {
        issues.push("run.times must be finite".into());
    }

    if !issues.is_empty() {
        return Err(CliError::Validation(issues));
    }
    let (Some(hamiltonian), Some(state)) = (hamiltonian, state) else {
        unreachable!("issues recorded for missing parts")
    };
    let set = validate_commuting_set(beables).map_err(|e| CliError::validation(e.to_string()))?;
    let propagator = diagonalize(&hamiltonian).map_err(CliError::from)?;
    let field = VelocityField::new(set, propagator, d.symmetrization, d.node_floor)
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(Model {
        config: config.clone(),
        field,
        state,
        tolerances: d.tolerances(),
    })
}

fn checked_hermitian(m: CMatrix) -> Result<Operator, f64> {
    let dev = hermitian_deviation(&m);
    Operator::hermitian(m).map_err(|_| dev)
}

fn resolve_state(spec: &StateSpec, dim: usize) -> Result<CVector, String> {
    match spec {
        StateSpec::Basis { basis } => {
            if *basis >= dim {
                return Err(format!("basis index {basis} out of range for dimension {dim}"));
            }
            Ok(CVector::from_fn(dim, |i, _| Complex64::new(if i == *basis { 1.0 } else { 0.0 }, 0.0)))
        }
        StateSpec::Dense(v) => {
            if v.len() != dim {
                return Err(format!("expected {dim} amplitudes, found {}", v.len()));
            }
            Ok(CVector::from_iterator(dim, v.iter().map(|&[re, im]| Complex64::new(re, im))))
        }
    }
}

/// Dense matrix for an operator spec, checked against `dim`.
pub fn resolve_operator(spec: &OperatorSpec, dim: usize) -> Result<CMatrix, String> {
    let m = match spec {
        OperatorSpec::Dense(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(format!("dense matrix must be {dim}x{dim}"));
            }
            CMatrix::from_fn(dim, dim, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]))
        }
        OperatorSpec::Named(name) => factor(name, Some(dim))?,
        OperatorSpec::Terms { terms } => {
            if terms.is_empty() {
                return Err("`terms` is empty".into());
            }
            let mut sum = CMatrix::zeros(dim, dim);
            for term in terms {
                if term.factors.is_empty() {
                    return Err("a term has no factors".into());
                }
                let implied = (term.factors.len() == 1).then_some(dim);
                let mut product = factor(&term.factors[0], implied)?;
                for f in &term.factors[1..] {
                    product = product.kronecker(&factor(f, None)?);
                }
                if product.nrows() != dim {
                    return Err(format!(
                        "term {:?} has dimension {}, expected {dim}",
                        term.factors,
                        product.nrows()
                    ));
                }
                sum += product * Complex64::new(term.coeff, 0.0);
            }
            sum
        }
    };
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err("matrix has non-finite entries".into());
    }
    Ok(m)
}

/// Named single-mode operator, `name` or `name:N`.
fn factor(spec: &str, implied: Option<usize>) -> Result<CMatrix, String> {
    let (name, size) = match spec.split_once(':') {
        Some((n, s)) => {
            let size: usize = s.parse().map_err(|_| format!("bad size in operator `{spec}`"))?;
            (n, Some(size))
        }
        None => (spec, None),
    };
    let c = |re: f64, im: f64| Complex64::new(re, im);
    if let Some(m) = match name {
        "sigma_x" => Some([[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]]),
        "sigma_y" => Some([[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]]),
        "sigma_z" => Some([[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]]),
        _ => None,
    } {
        if size.is_some_and(|s| s != 2) || size.is_none() && implied.is_some_and(|d| d != 2) {
            return Err(format!("`{name}` is 2-dimensional"));
        }
        return Ok(CMatrix::from_fn(2, 2, |i, j| m[i][j]));
    }
    let n = size
        .or(implied)
        .ok_or_else(|| format!("operator `{name}` needs an explicit size (`{name}:N`) inside a product"))?;
    if n == 0 {
        return Err(format!("operator `{spec}` has size 0"));
    }
    let lower = |i: usize, j: usize| if j == i + 1 { c((j as f64).sqrt(), 0.0) } else { c(0.0, 0.0) };
    Ok(match name {
        "identity" => CMatrix::identity(n, n),
        "number" => CMatrix::from_fn(n, n, |i, j| if i == j { c(i as f64, 0.0) } else { c(0.0, 0.0) }),
        "annihilation" => CMatrix::from_fn(n, n, lower),
        "creation" => CMatrix::from_fn(n, n, |i, j| lower(j, i)),
        "quadrature" => CMatrix::from_fn(n, n, |i, j| lower(i, j) + lower(j, i)),
        _ => {
            return Err(format!(
                "unknown operator `{name}` (known: sigma_x, sigma_y, sigma_z, identity, number, annihilation, creation, quadrature)"
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_factors() {
        let a = factor("annihilation:3", None).unwrap();
        assert_eq!(a[(0, 1)].re, 1.0);
        assert!((a[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        let n = factor("number", Some(4)).unwrap();
        let ad = factor("creation:4", None).unwrap();
        let an = factor("annihilation:4", None).unwrap();
        assert!((ad * an - n).iter().all(|z| z.norm() < 1e-12));
        assert!(factor("sigma_x", Some(3)).is_err());
        assert!(factor("number", None).is_err());
        assert!(factor("bogus:2", None).is_err());
    }

    #[test]
    fn terms_compose_kronecker_products() {
        let spec = OperatorSpec::Terms {
            terms: vec![
                Term { coeff: 1.0, factors: vec!["number:2".into(), "identity:2".into()] },
                Term { coeff: 1.0, factors: vec!["identity:2".into(), "number:2".into()] },
            ],
        };
        let m = resolve_operator(&spec, 4).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| m[(i, i)].re).collect();
        assert_eq!(diag, vec![0.0, 1.0, 1.0, 2.0]);
        assert!(resolve_operator(&spec, 2).is_err());
    }

    #[test]
    fn all_issues_reported_together() {
        let text = r#"{
            "dimension": 2,
            "hamiltonian": [[[0,0],[1,0]],[[0,0],[0,0]]],
            "beables": [{"label": "zz", "operator": "sigma_z"}, {"label": "xx", "operator": "sigma_x"}],
            "initial_state": [[1,0],[1,0]]
        }"#;
        let err = build_model(&parse_config(text).unwrap()).unwrap_err();
        let CliError::Validation(issues) = err else { panic!("{err:?}") };
        assert_eq!(issues.len(), 3, "{issues:?}");
        assert!(issues[0].contains("hamiltonian"));
        assert!(issues[1].contains("`zz`") && issues[1].contains("`xx`"));
        assert!(issues[2].contains("initial_state"));
    }

    #[test]
    fn preset_overrides() {
        let cfg = parse_config(r#"{"preset": "two-state-rabi", "run": {"seed": 7}}"#).unwrap();
        let base = presets::get("two-state-rabi").unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.t_final, base.run.t_final);
        assert_eq!(cfg.hamiltonian, base.hamiltonian);
        assert!(parse_config(r#"{"preset": "nope"}"#).is_err());
        assert!(parse_config(r#"{"preset": "two-state-rabi", "extra": 1}"#).is_err());
    }

    #[test]
    fn presets_round_trip() {
        for name in presets::NAMES {
            let cfg = presets::get(name).unwrap();
            let again = parse_config(&to_json(&cfg)).unwrap();
            assert_eq!(cfg, again, "{name}");
            assert_eq!(to_json(&cfg), to_json(&again));
            build_model(&again).unwrap();
        }
    }

    #[test]
    fn dense_form_round_trips() {
        for name in presets::NAMES {
            let cfg = presets::get(name).unwrap();
            let dense = presets::densified(&cfg).unwrap();
            let again = parse_config(&to_json(&dense)).unwrap();
            assert_eq!(dense, again);
            let a = build_model(&cfg).unwrap();
            let b = build_model(&again).unwrap();
            assert_eq!(a.field.propagator().hamiltonian(), b.field.propagator().hamiltonian());
            assert_eq!(a.state, b.state);
        }
    }
}
