//! Independent checks on the trajectory dynamics: initial-condition sampling
//! from the quantum distribution, the closed-form single-beable solutions, the
//! finite-difference continuity residual, and ensemble statistics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beables::{BeableOperator, BeableSet, LambdaConfig};
use crate::dynamics::{
    cell_distribution, integrate_at_times, quantum_probability, Tolerances, TrajectoryStatus,
    VelocityField,
};
use crate::error::{Error, Result};
use crate::linalg::{evolve, Propagator, QuantumState};

/// Random stream for trajectory `index` of a run seeded with `seed`.
/// Streams are independent of scheduling order.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws initial configurations from the exact joint cell distribution.
#[derive(Debug, Clone)]
pub struct CellSampler {
    tuples: Vec<Vec<usize>>,
    cumulative: Vec<f64>,
}

impl CellSampler {
    pub fn new(state: &QuantumState, set: &BeableSet) -> Result<Self> {
        let probabilities = cell_distribution(state, set)?;
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|&p| {
                acc += p.max(0.0);
                acc
            })
            .collect();
        Ok(Self {
            tuples: set.cell_tuples(),
            cumulative,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LambdaConfig {
        let total = *self.cumulative.last().expect("at least one cell tuple");
        let u = rng.random::<f64>() * total;
        let k = self
            .cumulative
            .iter()
            .position(|&c| c > u)
            .unwrap_or(self.cumulative.len() - 1);
        let lambdas = self.tuples[k]
            .iter()
            .map(|&n| {
                let lo = n as f64 - 0.5;
                loop {
                    // Rounding can land on the exclusive upper edge; redraw if so.
                    let l = lo + rng.random::<f64>();
                    if l < lo + 1.0 {
                        break l;
                    }
                }
            })
            .collect();
        LambdaConfig::new(lambdas)
    }
}

/// One configuration drawn from `P(Lambda, t)`, uniform within the chosen cells.
pub fn sample_initial(state: &QuantumState, set: &BeableSet, seed: u64) -> Result<LambdaConfig> {
    Ok(CellSampler::new(state, set)?.sample(&mut trajectory_rng(seed, 0)))
}

/// Closed-form two-state beable with eigenvalues +-1: `xi(t) = sign(<xi>(t) - xi0)`.
#[derive(Clone)]
pub struct TwoStateOracle {
    omega: f64,
    xi0: f64,
    curve: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TwoStateOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwoStateOracle")
            .field("omega", &self.omega)
            .field("xi0", &self.xi0)
            .finish_non_exhaustive()
    }
}

impl TwoStateOracle {
    /// Rabi system `H = (omega/2) sigma_x` started in the +1 eigenstate of the
    /// beable, so `<xi>(t) = cos(omega t)`.
    pub fn rabi(omega: f64, xi0: f64) -> Result<Self> {
        Self::with_curve(omega, xi0, move |t| (omega * t).cos())
    }

    pub fn with_curve(omega: f64, xi0: f64, curve: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(-1.0..=1.0).contains(&xi0) {
            return Err(Error::InvalidArgument(format!("xi0 = {xi0} outside [-1, 1]")));
        }
        Ok(Self {
            omega,
            xi0,
            curve: Arc::new(curve),
        })
    }

    /// `xi0 = 1 - 2 L0` for a level constant `L0`.
    pub fn from_level(omega: f64, level: f64) -> Result<Self> {
        Self::rabi(omega, 1.0 - 2.0 * level)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn xi0(&self) -> f64 {
        self.xi0
    }

    pub fn expectation(&self, t: f64) -> f64 {
        (self.curve)(t)
    }

    /// First hop of the Rabi preset, `arccos(xi0) / omega`.
    pub fn first_flip_time(&self) -> f64 {
        self.xi0.acos() / self.omega
    }
}

fn sign_up(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Beable value at `t`; ties resolve to +1.
pub fn two_state_solution(oracle: &TwoStateOracle, t: f64) -> f64 {
    sign_up(oracle.expectation(t) - oracle.xi0())
}

/// Midpoint-rule average of `sign(<xi>(t) - xi0)` over `xi0` uniform on `[-1, 1]`.
pub fn average_consistency(oracle: &TwoStateOracle, t: f64, n_xi0: usize) -> Result<f64> {
    if n_xi0 < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 xi0 nodes, got {n_xi0}")));
    }
    let c = oracle.expectation(t);
    let width = 2.0 / n_xi0 as f64;
    let sum: f64 = (0..n_xi0)
        .map(|k| sign_up(c - (-1.0 + (k as f64 + 0.5) * width)))
        .sum();
    Ok(sum / n_xi0 as f64)
}

/// `<t| L(lambda) |t>` for a single beable.
pub fn level_value(state: &QuantumState, b: &BeableOperator, lambda: f64) -> Result<f64> {
    if state.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: state.dim(),
        });
    }
    let n = b.operator_cell(lambda)?;
    let psi = state.amplitudes();
    Ok(psi.dotc(&b.apply_lower_in_cell(n, lambda, psi)).re)
}

/// Solves `<t| L(lambda(t)) |t> = <0| L(lambda0) |0>` for `lambda(t)`.
///
/// The level function is nondecreasing and piecewise linear with slope
/// `<t|P(n)|t>` in cell `n`. Where it is flat the smallest solution is returned.
pub fn single_beable_levelset(
    state0: &QuantumState,
    b: &BeableOperator,
    prop: &Propagator,
    lambda0: f64,
    t: f64,
) -> Result<f64> {
    const LEVEL_SLACK: f64 = 1e-10;
    let level = level_value(state0, b, lambda0)?;
    if !(-LEVEL_SLACK..=1.0 + LEVEL_SLACK).contains(&level) {
        return Err(Error::LevelOutOfRange { value: level });
    }
    let state = evolve(state0, prop, t - state0.time())?;
    let psi = state.amplitudes();
    let mut below = 0.0;
    let mut last_occupied = None;
    for n in 0..b.cells() {
        let p = psi.dotc(&b.apply_projector(n, psi)).re.max(0.0);
        if below + p >= level {
            if p > 0.0 {
                return Ok(n as f64 - 0.5 + ((level - below) / p).clamp(0.0, 1.0));
            }
            return Ok(n as f64 - 0.5);
        }
        if p > 0.0 {
            last_occupied = Some(n);
        }
        below += p;
    }
    // `level` exceeds the accumulated total only through rounding.
    let n = last_occupied.unwrap_or(b.cells() - 1);
    Ok((n as f64 + 0.5).min(b.upper()).next_down())
}

/// Ensemble histogram versus the exact quantum distribution at each time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n_trajectories: usize,
    pub n_completed: usize,
    pub node_aborted_count: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Cell tuples, lexicographic; indexes the inner vectors below.
    pub cells: Vec<Vec<usize>>,
    /// Per time, trajectory counts in each cell tuple.
    pub empirical: Vec<Vec<u64>>,
    /// Per time, exact probabilities of each cell tuple.
    pub quantum: Vec<Vec<f64>>,
    pub tv_distance: Vec<f64>,
    /// Per time and tuple, `(count - n p) / sqrt(n p (1 - p))`; absent where `p` is 0 or 1.
    pub z_scores: Vec<Vec<Option<f64>>>,
}

impl EnsembleReport {
    pub fn empirical_fraction(&self, time_index: usize, tuple_index: usize) -> f64 {
        self.empirical[time_index][tuple_index] as f64 / self.n_completed.max(1) as f64
    }
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Samples `n` initial configurations, integrates each through `times`, and
/// bins the cell tuples. Node-aborted trajectories are counted and left out of
/// every histogram.
pub fn ensemble_equivariance(
    field: &VelocityField,
    state0: &QuantumState,
    n: usize,
    times: &[f64],
    seed: u64,
    tol: &Tolerances,
) -> Result<EnsembleReport> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!("ensemble needs at least 100 trajectories, got {n}")));
    }
    if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("ensemble needs finite probe times".into()));
    }
    let set = field.set();
    let t0 = state0.time();
    let sampler = CellSampler::new(state0, set)?;

    // Probe times on each side of t0, ordered away from it.
    let mut forward: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= t0).collect();
    let mut backward: Vec<usize> = (0..times.len()).filter(|&k| times[k] < t0).collect();
    forward.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    backward.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let run_one = |index: usize| -> Result<Option<Vec<usize>>> {
        let lambda0 = sampler.sample(&mut trajectory_rng(seed, index as u64));
        let mut tuple_at = vec![0usize; times.len()];
        for leg in [&forward, &backward] {
            if leg.is_empty() {
                continue;
            }
            let leg_times: Vec<f64> = leg.iter().map(|&k| times[k]).collect();
            let traj = integrate_at_times(field, state0, &lambda0, &leg_times, tol)?;
            if traj.status == TrajectoryStatus::NodeAborted {
                return Ok(None);
            }
            for (&k, sample) in leg.iter().zip(&traj.samples) {
                tuple_at[k] = set.tuple_index(&set.cells_of(&sample.lambdas)?);
            }
        }
        Ok(Some(tuple_at))
    };
    let outcomes: Vec<Result<Option<Vec<usize>>>> = (0..n).into_par_iter().map(run_one).collect();

    let tuples = set.cell_tuples();
    let mut empirical = vec![vec![0u64; tuples.len()]; times.len()];
    let mut aborted = 0;
    for outcome in outcomes {
        match outcome? {
            Some(tuple_at) => {
                for (k, &idx) in tuple_at.iter().enumerate() {
                    empirical[k][idx] += 1;
                }
            }
            None => aborted += 1,
        }
    }
    let completed = n - aborted;

    let mut quantum = Vec::with_capacity(times.len());
    let mut tv_distance = Vec::with_capacity(times.len());
    let mut z_scores = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let state = evolve(state0, field.propagator(), t - t0)?;
        let q = tuples
            .iter()
            .map(|cells| quantum_probability(&state, set, cells))
            .collect::<Result<Vec<f64>>>()?;
        let denom = completed.max(1) as f64;
        let fractions: Vec<f64> = empirical[k].iter().map(|&c| c as f64 / denom).collect();
        tv_distance.push(total_variation(&fractions, &q));
        z_scores.push(
            empirical[k]
                .iter()
                .zip(&q)
                .map(|(&c, &p)| {
                    let var = completed as f64 * p * (1.0 - p);
                    (var > 0.0).then(|| (c as f64 - completed as f64 * p) / var.sqrt())
                })
                .collect(),
        );
        quantum.push(q);
    }

    Ok(EnsembleReport {
        n_trajectories: n,
        n_completed: completed,
        node_aborted_count: aborted,
        seed,
        times: times.to_vec(),
        cells: tuples,
        empirical,
        quantum,
        tv_distance,
        z_scores,
    })
}

/// `|dP/dt + sum_l dJ_l/dlambda_l|` by central differences with step `h`
/// in both time and lambda. Returns `None` when some lambda is within `h` of
/// its cell boundary, where the derivative is not defined pointwise.
pub fn continuity_residual(
    field: &VelocityField,
    state: &QuantumState,
    lambdas: &LambdaConfig,
    h: f64,
) -> Result<Option<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let set = field.set();
    let cells = set.cells_of(lambdas)?;
    let interior = lambdas
        .iter()
        .zip(&cells)
        .all(|(&l, &n)| l - h >= n as f64 - 0.5 && l + h < n as f64 + 0.5);
    if !interior {
        return Ok(None);
    }
    let prop = field.propagator();
    let later = quantum_probability(&evolve(state, prop, h)?, set, &cells)?;
    let earlier = quantum_probability(&evolve(state, prop, -h)?, set, &cells)?;
    let dp_dt = (later - earlier) / (2.0 * h);

    let mut divergence = 0.0;
    for ell in 0..set.len() {
        let mut up = lambdas.0.clone();
        let mut down = lambdas.0.clone();
        up[ell] += h;
        down[ell] -= h;
        let j_up = field.symmetrized_current(state, ell, &LambdaConfig::new(up))?;
        let j_down = field.symmetrized_current(state, ell, &LambdaConfig::new(down))?;
        divergence += (j_up - j_down) / (2.0 * h);
    }
    Ok(Some((dp_dt + divergence).abs()))
}
