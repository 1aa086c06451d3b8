//! Beable trajectories for finite-dimensional quantum systems.
//!
//! Commuting Hermitian beables carry a continuous configuration whose
//! stochastic-free flow reproduces the quantum cell distribution at all times.

pub mod beables;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod verification;

pub use beables::{validate_commuting_set, BeableOperator, BeableSet, LambdaConfig};
pub use dynamics::{
    integrate_at_times, integrate_trajectory, Symmetrization, Tolerances, Trajectory, TrajectoryStatus,
    VelocityField,
};
pub use error::{Error, ErrorKind, Result};
pub use linalg::{diagonalize, evolve, Operator, Propagator, QuantumState};
