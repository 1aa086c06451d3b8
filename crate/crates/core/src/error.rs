use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad classification used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input (dimensions, Hermiticity, normalization, ...).
    Input,
    /// Numerical failure during a computation.
    Numeric,
    /// The quantum probability of the occupied cell tuple fell below the node floor.
    Node,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator is not Hermitian (max |A - A^dagger| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("operator is not a projector (max |A^2 - A| = {deviation:.3e})")]
    NotProjector { deviation: f64 },

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("ordering {ordering:?} is not a permutation of 0..{cells}")]
    InvalidOrdering { ordering: Vec<usize>, cells: usize },

    #[error("beables `{first}` and `{second}` do not commute (max |[a, b]| = {norm:.3e})")]
    NonCommuting {
        first: String,
        second: String,
        norm: f64,
    },

    #[error("lambda = {lambda} lies outside [-1/2, {upper})")]
    LambdaOutOfRange { lambda: f64, upper: f64 },

    #[error("cell {cell} out of range for a beable with {cells} cells")]
    CellOutOfRange { cell: usize, cells: usize },

    #[error("expected {expected} entries (one per beable), found {found}")]
    WrongArity { expected: usize, found: usize },

    #[error("node reached at t = {time}: P{cells:?} = {probability:.3e}")]
    Node {
        cells: Vec<usize>,
        probability: f64,
        time: f64,
    },

    #[error("current for beable {beable} has imaginary residue {imaginary:.3e}")]
    ImaginaryCurrent { beable: usize, imaginary: f64 },

    #[error("step size underflow at t = {time} (h = {step:.3e})")]
    StepUnderflow { time: f64, step: f64 },

    #[error("step limit of {limit} exceeded at t = {time}")]
    TooManySteps { limit: usize, time: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("level-set constant L0 = {value} lies outside [0, 1]")]
    LevelOutOfRange { value: f64 },

    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Node { .. } => ErrorKind::Node,
            Error::ImaginaryCurrent { .. }
            | Error::StepUnderflow { .. }
            | Error::TooManySteps { .. }
            | Error::Eigen(_)
            | Error::LevelOutOfRange { .. }
            | Error::LambdaOutOfRange { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Input,
        }
    }
}
