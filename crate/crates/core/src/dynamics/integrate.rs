//! Dormand-Prince 5(4) integration of `d lambda / dt = v(Lambda, t)` with the
//! quantum state advanced exactly by the propagator.
//!
//! The velocity field is affine in each lambda inside a cell but jumps across
//! half-integer boundaries (the cell probability changes), so each step is
//! taken with the cell tuple frozen. A step that leaves the frozen cells is
//! shortened by bisection until the crossing coordinate sits within
//! `CROSSING_TOL` past the boundary, and integration restarts from there in the
//! new cells.

use serde::{Deserialize, Serialize};

use super::VelocityField;
use crate::beables::LambdaConfig;
use crate::error::{Error, Result};
use crate::linalg::{Evolution, QuantumState};

/// Distance past a cell boundary at which a located crossing is accepted.
pub const CROSSING_TOL: f64 = 1e-12;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Attempted steps allowed per trajectory, crossings included.
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            max_steps: 2_000_000,
        }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite();
        if !ok || self.max_steps == 0 {
            return Err(Error::InvalidArgument(format!("invalid tolerances {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    NodeAborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub lambdas: LambdaConfig,
    /// Beable values derived from `lambdas`.
    pub xis: Vec<f64>,
}

/// A beable hop: `beable` moved from cell `from` to cell `to` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub beable: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub time: f64,
    pub cells: Vec<usize>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Ordered along the direction of integration.
    pub samples: Vec<Sample>,
    pub crossings: Vec<Crossing>,
    pub status: TrajectoryStatus,
    pub abort: Option<NodeEvent>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// Integrates from `(state0.time(), lambda0)` to `t_final`, recording a sample
/// every `output_dt` and at `t_final`. `t_final` may precede the start time.
pub fn integrate_trajectory(
    field: &VelocityField,
    state0: &QuantumState,
    lambda0: &LambdaConfig,
    t_final: f64,
    output_dt: f64,
    tol: &Tolerances,
) -> Result<Trajectory> {
    if !(output_dt > 0.0 && output_dt.is_finite()) || !t_final.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "output_dt must be positive and t_final finite (got {output_dt}, {t_final})"
        )));
    }
    let t0 = state0.time();
    let span = t_final - t0;
    let dir = if span < 0.0 { -1.0 } else { 1.0 };
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = t0 + dir * output_dt * k as f64;
        if (t_final - t) * dir <= 1e-9 * output_dt {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(t_final);
    integrate_at_times(field, state0, lambda0, &times, tol)
}

/// Integrates from the state's time through `times`, which must be monotone
/// and all on one side of the start time.
pub fn integrate_at_times(
    field: &VelocityField,
    state0: &QuantumState,
    lambda0: &LambdaConfig,
    times: &[f64],
    tol: &Tolerances,
) -> Result<Trajectory> {
    tol.validate()?;
    let t0 = state0.time();
    let dir = match times.iter().find(|&&t| t != t0) {
        Some(&t) if t < t0 => -1.0,
        _ => 1.0,
    };
    let mut prev = t0;
    for &t in times {
        if !t.is_finite() || (t - prev) * dir < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "output times must be finite and monotone away from t0 = {t0}"
            )));
        }
        prev = t;
    }
    let set = field.set();
    let cells = set.cells_of(lambda0)?;
    let evolution = field.propagator().evolution(state0)?;
    let mut run = Run {
        field,
        evolution,
        tol: *tol,
        t: t0,
        y: lambda0.0.clone(),
        cells,
        dir,
        steps: 0,
        crossings: Vec::new(),
    };
    let mut samples = Vec::with_capacity(times.len());
    if let Some(node) = run.node_here() {
        return Ok(run.finish(samples, Some(node)));
    }

    let mut h = run.initial_step(times.last().copied().unwrap_or(t0))?;
    let mut fsal: Option<Vec<f64>> = None;
    for &target in times {
        match run.advance_to(target, &mut h, &mut fsal)? {
            Some(node) => return Ok(run.finish(samples, Some(node))),
            None => {
                let lambdas = LambdaConfig::new(run.y.clone());
                let xis = set.values_of(&lambdas)?;
                samples.push(Sample { t: target, lambdas, xis });
            }
        }
    }
    Ok(run.finish(samples, None))
}

struct Run<'a> {
    field: &'a VelocityField,
    evolution: Evolution<'a>,
    tol: Tolerances,
    t: f64,
    y: Vec<f64>,
    cells: Vec<usize>,
    dir: f64,
    steps: usize,
    crossings: Vec<Crossing>,
}

enum StepFailure {
    /// A stage evaluation hit a node in the frozen cells.
    Node,
    Fatal(Error),
}

impl From<Error> for StepFailure {
    fn from(e: Error) -> Self {
        match e {
            Error::Node { .. } => StepFailure::Node,
            e => StepFailure::Fatal(e),
        }
    }
}

impl Run<'_> {
    fn finish(self, samples: Vec<Sample>, node: Option<NodeEvent>) -> Trajectory {
        Trajectory {
            samples,
            crossings: self.crossings,
            status: if node.is_some() {
                TrajectoryStatus::NodeAborted
            } else {
                TrajectoryStatus::Completed
            },
            abort: node,
            seed: None,
        }
    }

    fn rate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let psi = self.evolution.amplitudes_at(t);
        self.field.velocity_in_cells(&psi, y, &self.cells, t)
    }

    fn node_here(&self) -> Option<NodeEvent> {
        let psi = self.evolution.amplitudes_at(self.t);
        let p = self.field.probability_in_cells(&psi, &self.cells);
        (!(p > self.field.node_floor())).then(|| NodeEvent {
            time: self.t,
            cells: self.cells.clone(),
            probability: p,
        })
    }

    fn initial_step(&self, t_end: f64) -> Result<f64> {
        let span = (t_end - self.t).abs();
        if span == 0.0 {
            return Ok(0.0);
        }
        let f0 = self.rate(self.t, &self.y)?;
        let speed = f0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(self.dir * span.min(1e-2 / speed.max(1.0)))
    }

    fn min_step(&self) -> f64 {
        1e-14 * self.t.abs().max(1.0)
    }

    /// Fifth-order solution of one frozen-cell step and, if requested, the stages.
    fn dopri(&self, h: f64, k1: &[f64], want_error: bool) -> std::result::Result<(Vec<f64>, f64, Vec<f64>), StepFailure> {
        let n = self.y.len();
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(k1.to_vec());
        for s in 1..6 {
            let ys: Vec<f64> = (0..n)
                .map(|i| self.y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                .collect();
            k.push(self.rate(self.t + C[s] * h, &ys)?);
        }
        let y5: Vec<f64> = (0..n)
            .map(|i| self.y[i] + h * (0..6).map(|j| A[6][j] * k[j][i]).sum::<f64>())
            .collect();
        if !want_error {
            return Ok((y5, 0.0, Vec::new()));
        }
        let k7 = self.rate(self.t + h, &y5)?;
        k.push(k7.clone());
        let mut err = 0.0_f64;
        for i in 0..n {
            let e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
            let scale = self.tol.atol + self.tol.rtol * self.y[i].abs().max(y5[i].abs());
            err = err.max((e / scale).abs());
        }
        if !y5.iter().all(|v| v.is_finite()) {
            err = f64::INFINITY;
        }
        Ok((y5, err, k7))
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(self.field.set().beables())
            .all(|(&l, b)| l >= -0.5 && l < b.upper())
    }

    /// Whether any coordinate has left its frozen cell `[n - 1/2, n + 1/2)`.
    fn left_cells(&self, y: &[f64]) -> bool {
        y.iter().zip(&self.cells).any(|(&l, &n)| {
            let n = n as f64;
            !(l >= n - 0.5 && l < n + 0.5)
        })
    }

    fn check_budget(&mut self) -> Result<()> {
        self.steps += 1;
        if self.steps > self.tol.max_steps {
            return Err(Error::TooManySteps {
                limit: self.tol.max_steps,
                time: self.t,
            });
        }
        Ok(())
    }

    /// Advances to `target`; returns a node event if the trajectory aborts.
    fn advance_to(&mut self, target: f64, h: &mut f64, fsal: &mut Option<Vec<f64>>) -> Result<Option<NodeEvent>> {
        while (target - self.t) * self.dir > 0.0 {
            self.check_budget()?;
            let remaining = target - self.t;
            let clipped = h.abs() >= remaining.abs();
            let step = if clipped { remaining } else { *h };
            if step.abs() < self.min_step() && !clipped {
                return Err(Error::StepUnderflow { time: self.t, step });
            }

            let k1 = match fsal.take() {
                Some(k) => k,
                None => match self.rate(self.t, &self.y) {
                    Ok(k) => k,
                    Err(Error::Node { .. }) => return Ok(self.node_here()),
                    Err(e) => return Err(e),
                },
            };
            let (y_new, err, k7) = match self.dopri(step, &k1, true) {
                Ok(out) => out,
                Err(StepFailure::Node) => {
                    if (step * 0.25).abs() < self.min_step() {
                        // The cells empty out within one unresolvable step.
                        let probability = self.field.probability_in_cells(&self.evolution.amplitudes_at(self.t), &self.cells);
                        return Ok(Some(NodeEvent { time: self.t, cells: self.cells.clone(), probability }));
                    }
                    *h = step * 0.25;
                    *fsal = Some(k1);
                    continue;
                }
                Err(StepFailure::Fatal(e)) => return Err(e),
            };

            if !(err <= 1.0) || !self.in_domain(&y_new) {
                let factor = if err.is_finite() && err > 1.0 {
                    (SAFETY * err.powf(-0.2)).max(MIN_FACTOR)
                } else {
                    0.25
                };
                *h = step * factor;
                *fsal = Some(k1);
                continue;
            }

            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            let proposed = step * factor;
            *h = if clipped && proposed.abs() < h.abs() { *h } else { proposed };

            if self.left_cells(&y_new) {
                let (dt, y_cross) = match self.locate_crossing(step, &k1, y_new) {
                    Ok(out) => out,
                    Err(Error::Node { cells, time, .. }) => {
                        let probability = self.field.probability_in_cells(&self.evolution.amplitudes_at(time), &cells);
                        return Ok(Some(NodeEvent { time, cells, probability }));
                    }
                    Err(e) => return Err(e),
                };
                self.t += dt;
                self.y = y_cross;
                let new_cells = self.field.set().cells_of(&LambdaConfig::new(self.y.clone()))?;
                for (ell, (&from, &to)) in self.cells.iter().zip(&new_cells).enumerate() {
                    if from != to {
                        self.crossings.push(Crossing { t: self.t, beable: ell, from, to });
                    }
                }
                self.cells = new_cells;
                *fsal = None;
                if let Some(node) = self.node_here() {
                    return Ok(Some(node));
                }
                continue;
            }

            self.t = if clipped { target } else { self.t + step };
            self.y = y_new;
            *fsal = Some(k7);
        }
        Ok(None)
    }

    /// Largest signed distance of a coordinate outside its frozen cell;
    /// negative while every coordinate is inside.
    fn excess(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.cells)
            .map(|(&l, &n)| {
                let n = n as f64;
                (l - (n + 0.5)).max((n - 0.5) - l)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn substep(&self, s: f64, k1: &[f64]) -> Result<Vec<f64>> {
        match self.dopri(s, k1, false) {
            Ok((y, _, _)) => Ok(y),
            Err(StepFailure::Node) => Err(Error::Node {
                cells: self.cells.clone(),
                probability: 0.0,
                time: self.t + s,
            }),
            Err(StepFailure::Fatal(e)) => Err(e),
        }
    }

    /// Shortens the step until the first coordinate to leave its cell is at
    /// most `CROSSING_TOL` past the boundary. Illinois iteration on the signed
    /// excess, aimed at half the tolerance, with bisection as a fallback.
    /// Returns the step taken and the state just beyond the boundary.
    fn locate_crossing(&mut self, step: f64, k1: &[f64], y_step: Vec<f64>) -> Result<(f64, Vec<f64>)> {
        let aim = 0.5 * CROSSING_TOL;
        let (mut lo, mut hi) = (0.0, step);
        let mut f_lo = self.excess(&self.y).min(0.0) - aim;
        let mut f_hi = self.excess(&y_step) - aim;
        let mut y_hi = y_step;
        let mut side = 0;
        for iter in 0..200 {
            if f_hi + aim <= CROSSING_TOL || (hi - lo).abs() <= 4.0 * f64::EPSILON * self.t.abs().max(hi.abs()) {
                break;
            }
            let mut s = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            if iter >= 60 || !s.is_finite() || (s - lo) * (hi - s) <= 0.0 {
                s = 0.5 * (lo + hi);
            }
            let y = self.substep(s, k1)?;
            let f = self.excess(&y) - aim;
            if self.left_cells(&y) {
                (hi, f_hi, y_hi) = (s, f, y);
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            } else {
                (lo, f_lo) = (s, f);
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            }
        }
        Ok((hi, y_hi))
    }
}
