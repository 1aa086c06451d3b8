//! Commuting beable operators, their eigenvalue-to-cell layout, and the
//! cell-resolved operators built from them.
//!
//! A beable with `K` distinct eigenvalues owns the lambda line `[-1/2, K - 1/2)`.
//! Cell `n` is the interval `[n - 1/2, n + 1/2)` and carries one eigenvalue and
//! its (possibly degenerate) eigenprojector `P(n)`. Cells are packed without
//! gaps; exact half-integers belong to the cell above.

use std::ops::{Deref, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    commutator, hermitian_eigen, max_abs, CMatrix, CVector, Operator, OperatorKind, Propagator,
    C64,
};

/// Relative tolerance below which eigenvalues are merged into one cell.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-9;

/// Relative commutator bound accepted by [`validate_commuting_set`].
pub const COMMUTATION_TOL: f64 = 1e-10;

/// Nearest integer with ties rounded up: `n(0.5) = 1`, `n(-0.5) = 0`.
pub fn nearest_cell(lambda: f64) -> i64 {
    (lambda + 0.5).floor() as i64
}

#[derive(Debug, Clone)]
pub struct BeableOperator {
    label: String,
    operator: Operator,
    /// Eigenvalue carried by each cell.
    eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, columns grouped cell by cell.
    basis: CMatrix,
    /// `offsets[n]..offsets[n + 1]` are the columns of cell `n`.
    offsets: Vec<usize>,
    /// `ordering[g]` is the cell of the `g`-th eigenvalue group in ascending order.
    ordering: Vec<usize>,
}

impl BeableOperator {
    /// Groups the spectrum of `xi` into cells.
    ///
    /// Eigenvalues closer than `degeneracy_tol * max(1, |xi|_max)` share a cell.
    /// Without an explicit `ordering` the cells follow ascending eigenvalue; with
    /// one, spectral group `g` is placed in cell `ordering[g]`.
    pub fn from_hermitian(
        label: impl Into<String>,
        xi: &Operator,
        degeneracy_tol: f64,
        ordering: Option<&[usize]>,
    ) -> Result<Self> {
        if !(degeneracy_tol >= 0.0 && degeneracy_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degeneracy tolerance must be finite and non-negative, got {degeneracy_tol}"
            )));
        }
        let (values, vectors) = hermitian_eigen(xi)?;
        let dim = xi.dim();
        let tol = degeneracy_tol * xi.max_abs().max(1.0);

        // Consecutive ascending eigenvalues within `tol` of each other chain into one group.
        let mut groups: Vec<Range<usize>> = Vec::new();
        let mut start = 0;
        for k in 1..=dim {
            if k == dim || values[k] - values[k - 1] > tol {
                groups.push(start..k);
                start = k;
            }
        }
        let cells = groups.len();

        let ordering: Vec<usize> = match ordering {
            Some(o) => {
                let mut seen = vec![false; cells];
                let valid = o.len() == cells
                    && o.iter().all(|&c| c < cells && !std::mem::replace(&mut seen[c], true));
                if !valid {
                    return Err(Error::InvalidOrdering {
                        ordering: o.to_vec(),
                        cells,
                    });
                }
                o.to_vec()
            }
            None => (0..cells).collect(),
        };

        let mut group_of_cell = vec![0; cells];
        for (g, &c) in ordering.iter().enumerate() {
            group_of_cell[c] = g;
        }

        let mut eigenvalues = Vec::with_capacity(cells);
        let mut columns = Vec::with_capacity(dim);
        let mut offsets = vec![0];
        for &g in &group_of_cell {
            let r = groups[g].clone();
            eigenvalues.push(values[r.clone()].iter().sum::<f64>() / r.len() as f64);
            columns.extend(r);
            offsets.push(columns.len());
        }
        let basis = CMatrix::from_fn(dim, dim, |i, j| vectors[(i, columns[j])]);

        Ok(Self {
            label: label.into(),
            operator: xi.clone(),
            eigenvalues,
            basis,
            offsets,
            ordering,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of cells `K`.
    pub fn cells(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn rank(&self, cell: usize) -> usize {
        self.offsets[cell + 1] - self.offsets[cell]
    }

    /// Upper end of the lambda domain, `K - 1/2`.
    pub fn upper(&self) -> f64 {
        self.cells() as f64 - 0.5
    }

    fn check_cell(&self, cell: usize) -> Result<()> {
        if cell >= self.cells() {
            return Err(Error::CellOutOfRange {
                cell,
                cells: self.cells(),
            });
        }
        Ok(())
    }

    /// Cell of a trajectory coordinate; `lambda` must lie in `[-1/2, K - 1/2)`.
    pub fn cell_index(&self, lambda: f64) -> Result<usize> {
        if !(lambda >= -0.5 && lambda < self.upper()) {
            return Err(Error::LambdaOutOfRange {
                lambda,
                upper: self.upper(),
            });
        }
        Ok(nearest_cell(lambda) as usize)
    }

    /// Like [`cell_index`](Self::cell_index) but also accepts the closed top
    /// boundary `K - 1/2`, which is assigned to the top cell. Operator-valued
    /// functions of lambda are continuous there.
    pub fn operator_cell(&self, lambda: f64) -> Result<usize> {
        if lambda == self.upper() {
            return Ok(self.cells() - 1);
        }
        self.cell_index(lambda)
    }

    pub fn eigenvalue_at(&self, lambda: f64) -> Result<f64> {
        Ok(self.eigenvalues[self.cell_index(lambda)?])
    }

    fn block(&self, cells: Range<usize>) -> nalgebra::DMatrixView<'_, C64> {
        let lo = self.offsets[cells.start];
        let hi = self.offsets[cells.end];
        self.basis.columns(lo, hi - lo)
    }

    fn project_block(&self, cells: Range<usize>, x: &CVector) -> CVector {
        let b = self.block(cells);
        b * b.ad_mul(x)
    }

    /// `P(n) x`.
    pub fn apply_projector(&self, cell: usize, x: &CVector) -> CVector {
        self.project_block(cell..cell + 1, x)
    }

    /// `sum_{j < n} P(j) x`.
    pub fn apply_below(&self, cell: usize, x: &CVector) -> CVector {
        self.project_block(0..cell, x)
    }

    /// `L(lambda) x` with the cell held at `cell`; affine in `lambda`, so it
    /// extends smoothly past the cell edges.
    pub fn apply_lower_in_cell(&self, cell: usize, lambda: f64, x: &CVector) -> CVector {
        let weight = lambda - cell as f64 + 0.5;
        self.apply_below(cell, x) + self.apply_projector(cell, x).scale(weight)
    }

    pub fn projector(&self, cell: usize) -> Result<Operator> {
        self.check_cell(cell)?;
        let b = self.block(cell..cell + 1);
        Ok(Operator::from_parts(b * b.adjoint(), OperatorKind::Projector))
    }

    pub fn projectors(&self) -> Vec<Operator> {
        (0..self.cells())
            .map(|n| self.projector(n).expect("cell in range"))
            .collect()
    }

    /// `sum_n xi_n P(n)`.
    pub fn reconstruct(&self) -> Operator {
        let d = CVector::from_fn(self.dim(), |j, _| {
            let cell = self.offsets.partition_point(|&o| o <= j) - 1;
            C64::new(self.eigenvalues[cell], 0.0)
        });
        Operator::from_parts(
            &self.basis * CMatrix::from_diagonal(&d) * self.basis.adjoint(),
            OperatorKind::Hermitian,
        )
    }

    /// `L(lambda) = (lambda - n + 1/2) P(n) + sum_{j<n} P(j)`.
    pub fn lower_projector(&self, lambda: f64) -> Result<Operator> {
        let n = self.operator_cell(lambda)?;
        let below = self.block(0..n);
        let here = self.block(n..n + 1);
        let weight = lambda - n as f64 + 0.5;
        let m = below * below.adjoint() + (here * here.adjoint()).scale(weight);
        Ok(Operator::from_parts(m, OperatorKind::Hermitian))
    }

    /// `G(lambda) = 1 - L(lambda)`.
    pub fn upper_projector(&self, lambda: f64) -> Result<Operator> {
        let l = self.lower_projector(lambda)?;
        let m = CMatrix::identity(self.dim(), self.dim()) - l.matrix();
        Ok(Operator::from_parts(m, OperatorKind::Hermitian))
    }

    /// Current operator `J(lambda) = -(1/i)[L(lambda), H] = i[L(lambda), H]`.
    pub fn current_operator(&self, lambda: f64, prop: &Propagator) -> Result<Operator> {
        let l = self.lower_projector(lambda)?;
        let comm = commutator(&l, prop.hamiltonian())?;
        let m = comm.matrix().map(|z| z * C64::new(0.0, 1.0));
        Ok(Operator::from_parts(m, OperatorKind::Hermitian))
    }
}

/// A list of mutually commuting beables on one Hilbert space.
#[derive(Debug, Clone)]
pub struct BeableSet {
    beables: Vec<BeableOperator>,
}

/// Checks pairwise commutation `|[a, b]|_max <= 1e-10 |a|_max |b|_max`.
pub fn validate_commuting_set(beables: Vec<BeableOperator>) -> Result<BeableSet> {
    let first = beables
        .first()
        .ok_or_else(|| Error::InvalidArgument("beable set is empty".into()))?;
    let dim = first.dim();
    for b in &beables {
        if b.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: b.dim(),
            });
        }
    }
    for (i, a) in beables.iter().enumerate() {
        for b in &beables[i + 1..] {
            let norm = commutator(a.operator(), b.operator())?.max_abs();
            if norm > COMMUTATION_TOL * a.operator().max_abs() * b.operator().max_abs() {
                return Err(Error::NonCommuting {
                    first: a.label().to_string(),
                    second: b.label().to_string(),
                    norm,
                });
            }
        }
    }
    Ok(BeableSet { beables })
}

impl BeableSet {
    pub fn beables(&self) -> &[BeableOperator] {
        &self.beables
    }

    pub fn len(&self) -> usize {
        self.beables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beables.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.beables[0].dim()
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.beables.iter().map(BeableOperator::cells).collect()
    }

    /// Number of joint cell tuples.
    pub fn tuple_count(&self) -> usize {
        self.beables.iter().map(BeableOperator::cells).product()
    }

    /// All cell tuples in lexicographic order, first beable most significant.
    pub fn cell_tuples(&self) -> Vec<Vec<usize>> {
        let counts = self.cell_counts();
        let mut out = Vec::with_capacity(self.tuple_count());
        let mut current = vec![0; counts.len()];
        loop {
            out.push(current.clone());
            let mut k = counts.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                current[k] += 1;
                if current[k] < counts[k] {
                    break;
                }
                current[k] = 0;
            }
        }
    }

    /// Position of `cells` in [`cell_tuples`](Self::cell_tuples).
    pub fn tuple_index(&self, cells: &[usize]) -> usize {
        cells
            .iter()
            .zip(&self.beables)
            .fold(0, |acc, (&c, b)| acc * b.cells() + c)
    }

    pub fn check_cells(&self, cells: &[usize]) -> Result<()> {
        if cells.len() != self.len() {
            return Err(Error::WrongArity {
                expected: self.len(),
                found: cells.len(),
            });
        }
        for (&c, b) in cells.iter().zip(&self.beables) {
            b.check_cell(c)?;
        }
        Ok(())
    }

    /// Cells of a configuration; every lambda must lie in its half-open domain.
    pub fn cells_of(&self, lambdas: &LambdaConfig) -> Result<Vec<usize>> {
        self.check_arity(lambdas)?;
        lambdas
            .iter()
            .zip(&self.beables)
            .map(|(&l, b)| b.cell_index(l))
            .collect()
    }

    /// As [`cells_of`](Self::cells_of), accepting each closed top boundary.
    pub fn operator_cells_of(&self, lambdas: &LambdaConfig) -> Result<Vec<usize>> {
        self.check_arity(lambdas)?;
        lambdas
            .iter()
            .zip(&self.beables)
            .map(|(&l, b)| b.operator_cell(l))
            .collect()
    }

    fn check_arity(&self, lambdas: &LambdaConfig) -> Result<()> {
        if lambdas.len() != self.len() {
            return Err(Error::WrongArity {
                expected: self.len(),
                found: lambdas.len(),
            });
        }
        Ok(())
    }

    /// Beable values `Xi` of a configuration.
    pub fn values_of(&self, lambdas: &LambdaConfig) -> Result<Vec<f64>> {
        self.check_arity(lambdas)?;
        lambdas
            .iter()
            .zip(&self.beables)
            .map(|(&l, b)| b.eigenvalue_at(l))
            .collect()
    }

    /// `prod_l P_l(n_l) x`, skipping beable `skip`.
    pub(crate) fn apply_joint(&self, cells: &[usize], x: &CVector, skip: Option<usize>) -> CVector {
        self.beables
            .iter()
            .zip(cells)
            .enumerate()
            .filter(|(l, _)| Some(*l) != skip)
            .fold(x.clone(), |v, (_, (b, &c))| b.apply_projector(c, &v))
    }
}

/// The trajectory coordinates `(lambda_1, ..., lambda_L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaConfig(pub Vec<f64>);

impl LambdaConfig {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Self(lambdas)
    }
}

impl Deref for LambdaConfig {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for LambdaConfig {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Largest entry of `[a, b]`; exposed for diagnostics.
pub fn commutator_norm(a: &Operator, b: &Operator) -> Result<f64> {
    Ok(max_abs(commutator(a, b)?.matrix()))
}
