//! Dense complex operator algebra and exact unitary propagation (hbar = 1).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative Hermiticity tolerance applied by [`Operator::hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute idempotency tolerance applied by [`Operator::projector`].
pub const PROJECTOR_TOL: f64 = 1e-10;
/// Norm tolerance for [`QuantumState`].
pub const NORM_TOL: f64 = 1e-10;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    General,
    Hermitian,
    Projector,
}

/// Dense square complex matrix with a checked structural flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    kind: OperatorKind,
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

impl Operator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        check_square(&matrix)?;
        Ok(Self {
            matrix,
            kind: OperatorKind::General,
        })
    }

    /// Flags `matrix` as Hermitian after checking `|A - A^dagger|_max <= 1e-12 |A|_max`.
    /// The stored matrix is the exact Hermitian part.
    pub fn hermitian(matrix: CMatrix) -> Result<Self> {
        check_square(&matrix)?;
        let deviation = hermitian_deviation(&matrix);
        if deviation > HERMITIAN_TOL * max_abs(&matrix) {
            return Err(Error::NotHermitian { deviation });
        }
        let matrix = (&matrix + matrix.adjoint()).scale(0.5);
        Ok(Self {
            matrix,
            kind: OperatorKind::Hermitian,
        })
    }

    pub fn projector(matrix: CMatrix) -> Result<Self> {
        let op = Self::hermitian(matrix)?;
        let deviation = max_abs(&(&op.matrix * &op.matrix - &op.matrix));
        if deviation > PROJECTOR_TOL {
            return Err(Error::NotProjector { deviation });
        }
        Ok(Self {
            kind: OperatorKind::Projector,
            ..op
        })
    }

    pub(crate) fn from_parts(matrix: CMatrix, kind: OperatorKind) -> Self {
        Self { matrix, kind }
    }

    pub fn from_real(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let matrix = CMatrix::from_fn(n, rows.first().map_or(0, |r| r.len()), |i, j| {
            C64::new(rows[i][j], 0.0)
        });
        Self::new(matrix)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_parts(CMatrix::identity(dim, dim), OperatorKind::Projector)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_parts(CMatrix::zeros(dim, dim), OperatorKind::Projector)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn is_hermitian(&self) -> bool {
        matches!(self.kind, OperatorKind::Hermitian | OperatorKind::Projector)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }

    pub fn adjoint(&self) -> Operator {
        Self::from_parts(self.matrix.adjoint(), self.kind)
    }

    pub fn scale(&self, factor: f64) -> Operator {
        let kind = match self.kind {
            OperatorKind::Projector if factor != 1.0 && factor != 0.0 => OperatorKind::Hermitian,
            k => k,
        };
        Self::from_parts(self.matrix.scale(factor), kind)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Operator) -> Operator {
        let kind = match (self.kind, other.kind) {
            (OperatorKind::General, _) | (_, OperatorKind::General) => OperatorKind::General,
            (OperatorKind::Projector, OperatorKind::Projector) => OperatorKind::Projector,
            _ => OperatorKind::Hermitian,
        };
        Self::from_parts(self.matrix.kronecker(&other.matrix), kind)
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        &self.matrix * v
    }
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Pauli matrices in the basis (|up>, |down>), with sigma_z |up> = +|up>.
pub mod pauli {
    use super::*;

    pub fn x() -> Operator {
        Operator::hermitian(CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ))
        .expect("sigma_x is Hermitian")
    }

    pub fn y() -> Operator {
        Operator::hermitian(CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        ))
        .expect("sigma_y is Hermitian")
    }

    pub fn z() -> Operator {
        Operator::hermitian(CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)],
        ))
        .expect("sigma_z is Hermitian")
    }
}

/// Normalized state vector `|t>` together with its time.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: CVector,
    time: f64,
}

impl QuantumState {
    pub fn new(amplitudes: CVector, time: f64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidArgument("state vector is empty".into()));
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { amplitudes, time })
    }

    /// Rescales `amplitudes` to unit norm. Fails only on a zero or non-finite vector.
    pub fn normalized(amplitudes: CVector, time: f64) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NotNormalized { norm });
        }
        Self::new(amplitudes.unscale(norm), time)
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut v = CVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Self::new(v, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `AB - BA`.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    check_dims(a.dim(), b.dim())?;
    let m = a.matrix() * b.matrix() - b.matrix() * a.matrix();
    Ok(Operator::from_parts(m, OperatorKind::General))
}

/// `<t|A|t>`.
pub fn expectation(state: &QuantumState, a: &Operator) -> Result<C64> {
    check_dims(a.dim(), state.dim())?;
    Ok(state.amplitudes().dotc(&a.apply(state.amplitudes())))
}

/// Eigendecomposition of a time-independent Hamiltonian, `H = V diag(E) V^dagger`.
#[derive(Debug, Clone)]
pub struct Propagator {
    hamiltonian: Operator,
    energies: DVector<f64>,
    eigenvectors: CMatrix,
}

/// Reconstruction and unitarity tolerance checked by [`diagonalize`].
pub const PROPAGATOR_TOL: f64 = 1e-10;

/// Ascending eigenvalues and matching orthonormal eigenvectors of a Hermitian operator.
pub(crate) fn hermitian_eigen(h: &Operator) -> Result<(Vec<f64>, CMatrix)> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian {
            deviation: hermitian_deviation(h.matrix()),
        });
    }
    let dim = h.dim();
    let scale = h.max_abs();
    if scale == 0.0 {
        return Ok((vec![0.0; dim], CMatrix::identity(dim, dim)));
    }
    // Work on the scaled matrix so the convergence threshold is relative.
    let scaled = h.matrix().unscale(scale);
    let eig = nalgebra::SymmetricEigen::try_new(scaled, f64::EPSILON, 10_000 * dim.max(1))
        .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k] * scale).collect();
    let vectors = CMatrix::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Diagonalizes a Hermitian Hamiltonian. Eigenvalues come back ascending,
/// degeneracies untouched.
pub fn diagonalize(h: &Operator) -> Result<Propagator> {
    let (values, vectors) = hermitian_eigen(h)?;
    let dim = h.dim();
    let energies = DVector::from_vec(values);

    let diag = CMatrix::from_diagonal(&energies.map(|e| C64::new(e, 0.0)));
    let rebuilt = &vectors * diag * vectors.adjoint();
    let residual = max_abs(&(rebuilt - h.matrix()));
    if residual > PROPAGATOR_TOL * h.max_abs().max(f64::MIN_POSITIVE) && residual > 0.0 {
        return Err(Error::Eigen(format!(
            "reconstruction residual {residual:.3e} exceeds tolerance"
        )));
    }
    let gram = vectors.adjoint() * &vectors - CMatrix::identity(dim, dim);
    let unitarity = max_abs(&gram);
    if unitarity > PROPAGATOR_TOL {
        return Err(Error::Eigen(format!(
            "eigenvector matrix deviates from unitary by {unitarity:.3e}"
        )));
    }
    Ok(Propagator {
        hamiltonian: h.clone(),
        energies,
        eigenvectors: vectors,
    })
}

impl Propagator {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// Caches the energy-basis coefficients of `state` so that `|t>` can be produced
    /// for any `t` with a single matrix-vector product.
    pub fn evolution(&self, state: &QuantumState) -> Result<Evolution<'_>> {
        check_dims(self.dim(), state.dim())?;
        Ok(Evolution {
            propagator: self,
            coefficients: self.eigenvectors.adjoint() * state.amplitudes(),
            origin: state.time(),
        })
    }
}

/// A state pinned at one time, evolved exactly on demand.
#[derive(Debug, Clone)]
pub struct Evolution<'a> {
    propagator: &'a Propagator,
    coefficients: CVector,
    origin: f64,
}

impl Evolution<'_> {
    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn amplitudes_at(&self, t: f64) -> CVector {
        let dt = t - self.origin;
        let phased = CVector::from_fn(self.coefficients.len(), |k, _| {
            self.coefficients[k] * (-I * (self.propagator.energies[k] * dt)).exp()
        });
        &self.propagator.eigenvectors * phased
    }

    pub fn state_at(&self, t: f64) -> QuantumState {
        QuantumState {
            amplitudes: self.amplitudes_at(t),
            time: t,
        }
    }
}

/// `|t + dt> = V e^{-i E dt} V^dagger |t>`.
pub fn evolve(state: &QuantumState, prop: &Propagator, dt: f64) -> Result<QuantumState> {
    check_dims(prop.dim(), state.dim())?;
    if dt == 0.0 {
        return Ok(state.clone());
    }
    Ok(prop.evolution(state)?.state_at(state.time() + dt))
}

/// Random test fixtures shared by the verification suites.
pub mod random {
    use super::*;
    use rand::Rng;

    /// Box-Muller draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
        C64::new(standard_normal(rng), standard_normal(rng))
    }

    /// GUE-like Hermitian matrix with O(1) entries.
    pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Operator {
        let a = CMatrix::from_fn(dim, dim, |_, _| complex_normal(rng));
        Operator::hermitian((&a + a.adjoint()).scale(0.5)).expect("constructed Hermitian")
    }

    /// Haar-random pure state.
    pub fn state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> QuantumState {
        let v = CVector::from_fn(dim, |_, _| complex_normal(rng));
        QuantumState::normalized(v, 0.0).expect("nonzero gaussian vector")
    }
}
