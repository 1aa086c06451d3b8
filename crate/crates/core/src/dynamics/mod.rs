//! Quantum cell probabilities, symmetrized probability currents, and the
//! velocity field `v_l = J_l / P` that moves the lambda coordinates.

mod integrate;

pub use integrate::{
    integrate_at_times, integrate_trajectory, Crossing, NodeEvent, Sample, Tolerances, Trajectory,
    TrajectoryStatus,
};

use serde::{Deserialize, Serialize};

use crate::beables::{BeableSet, LambdaConfig};
use crate::error::{Error, Result};
use crate::linalg::{CVector, Propagator, QuantumState, C64};

/// Probabilities at or below this are treated as nodes by default.
pub const DEFAULT_NODE_FLOOR: f64 = 1e-12;

/// Largest imaginary residue tolerated in a symmetrized current, relative to
/// `max(1, |H|_max)`.
pub const IMAGINARY_TOL: f64 = 1e-9;

/// How the product of the other beables' projectors is arranged around `J_l`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetrization {
    /// Average over every placement of the other projectors left and right of `J_l`.
    #[default]
    SymmetricAverage,
    /// `Re <t| P_1..P_{l-1} J_l P_{l+1}..P_L |t>`.
    OrderedRealPart,
}

/// `<t| prod_l P_l(n_l) |t>`.
pub fn quantum_probability(state: &QuantumState, set: &BeableSet, cells: &[usize]) -> Result<f64> {
    if state.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: state.dim(),
        });
    }
    set.check_cells(cells)?;
    Ok(probability_of(set, state.amplitudes(), cells))
}

fn probability_of(set: &BeableSet, psi: &CVector, cells: &[usize]) -> f64 {
    psi.dotc(&set.apply_joint(cells, psi, None)).re
}

/// Exact quantum distribution over all cell tuples, in
/// [`BeableSet::cell_tuples`] order.
pub fn cell_distribution(state: &QuantumState, set: &BeableSet) -> Result<Vec<f64>> {
    set.cell_tuples()
        .iter()
        .map(|cells| quantum_probability(state, set, cells))
        .collect()
}

/// Weight `k! (L-1-k)! / L!` of a placement with `k` projectors left of `J_l`.
fn placement_weights(beables: usize) -> Vec<f64> {
    let factorial = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    let total = factorial(beables);
    (0..beables)
        .map(|k| factorial(k) * factorial(beables - 1 - k) / total)
        .collect()
}

/// The velocity field of a fixed beable set and Hamiltonian.
#[derive(Debug, Clone)]
pub struct VelocityField {
    set: BeableSet,
    propagator: Propagator,
    symmetrization: Symmetrization,
    node_floor: f64,
    weights: Vec<f64>,
    imaginary_tol: f64,
}

impl VelocityField {
    pub fn new(
        set: BeableSet,
        propagator: Propagator,
        symmetrization: Symmetrization,
        node_floor: f64,
    ) -> Result<Self> {
        if set.dim() != propagator.dim() {
            return Err(Error::DimensionMismatch {
                expected: set.dim(),
                found: propagator.dim(),
            });
        }
        if !(node_floor >= 0.0 && node_floor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "node floor must be finite and non-negative, got {node_floor}"
            )));
        }
        let weights = placement_weights(set.len());
        let imaginary_tol = IMAGINARY_TOL * propagator.hamiltonian().max_abs().max(1.0);
        Ok(Self {
            set,
            propagator,
            symmetrization,
            node_floor,
            weights,
            imaginary_tol,
        })
    }

    pub fn set(&self) -> &BeableSet {
        &self.set
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn symmetrization(&self) -> Symmetrization {
        self.symmetrization
    }

    pub fn node_floor(&self) -> f64 {
        self.node_floor
    }

    /// Subset weights indexed by the number of projectors placed left of `J_l`.
    pub fn placement_weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_state(&self, state: &QuantumState) -> Result<()> {
        if state.dim() != self.set.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.set.dim(),
                found: state.dim(),
            });
        }
        Ok(())
    }

    /// `<a| J_l(lambda) |b>` with `J = i[L, H]`, the cell of beable `l` held at `cell`.
    fn current_element(&self, ell: usize, cell: usize, lambda: f64, a: &CVector, b: &CVector) -> C64 {
        let beable = &self.set.beables()[ell];
        let h = self.propagator.hamiltonian();
        let la = beable.apply_lower_in_cell(cell, lambda, a);
        let lb = beable.apply_lower_in_cell(cell, lambda, b);
        let ha = h.apply(a);
        let hb = h.apply(b);
        (la.dotc(&hb) - ha.dotc(&lb)) * C64::new(0.0, 1.0)
    }

    /// Unsymmetrized-to-real current of beable `ell`, before the imaginary part is dropped.
    fn current_raw(&self, psi: &CVector, ell: usize, lambdas: &[f64], cells: &[usize]) -> C64 {
        let others: Vec<usize> = (0..self.set.len()).filter(|&k| k != ell).collect();
        let beables = self.set.beables();
        let project = |members: &mut dyn Iterator<Item = usize>| {
            members.fold(psi.clone(), |v, k| beables[k].apply_projector(cells[k], &v))
        };
        match self.symmetrization {
            Symmetrization::SymmetricAverage => {
                // 2^(L-1) placements of the other projectors.
                let mut total = C64::new(0.0, 0.0);
                for mask in 0u64..(1u64 << others.len()) {
                    let left = project(&mut others.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &k)| k));
                    let right = project(&mut others.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 0).map(|(_, &k)| k));
                    let weight = self.weights[mask.count_ones() as usize];
                    total += self.current_element(ell, cells[ell], lambdas[ell], &left, &right) * weight;
                }
                total
            }
            Symmetrization::OrderedRealPart => {
                let left = project(&mut others.iter().copied().filter(|&k| k < ell));
                let right = project(&mut others.iter().copied().filter(|&k| k > ell));
                let j = self.current_element(ell, cells[ell], lambdas[ell], &left, &right);
                C64::new(j.re, 0.0)
            }
        }
    }

    fn current_checked(&self, psi: &CVector, ell: usize, lambdas: &[f64], cells: &[usize]) -> Result<f64> {
        let j = self.current_raw(psi, ell, lambdas, cells);
        if j.im.abs() > self.imaginary_tol || !j.re.is_finite() {
            return Err(Error::ImaginaryCurrent {
                beable: ell,
                imaginary: j.im,
            });
        }
        Ok(j.re)
    }

    /// Complex current before truncation to its real part; the imaginary part
    /// is a numerical residue.
    pub fn current_with_residue(&self, state: &QuantumState, ell: usize, lambdas: &LambdaConfig) -> Result<C64> {
        self.check_state(state)?;
        let cells = self.set.operator_cells_of(lambdas)?;
        if ell >= self.set.len() {
            return Err(Error::InvalidArgument(format!("no beable with index {ell}")));
        }
        Ok(self.current_raw(state.amplitudes(), ell, lambdas, &cells))
    }

    /// Real probability current `J_l(Lambda, t)`.
    pub fn symmetrized_current(&self, state: &QuantumState, ell: usize, lambdas: &LambdaConfig) -> Result<f64> {
        self.check_state(state)?;
        let cells = self.set.operator_cells_of(lambdas)?;
        if ell >= self.set.len() {
            return Err(Error::InvalidArgument(format!("no beable with index {ell}")));
        }
        self.current_checked(state.amplitudes(), ell, lambdas, &cells)
    }

    /// `v_l = J_l / P` for every beable.
    pub fn velocity(&self, state: &QuantumState, lambdas: &LambdaConfig) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let cells = self.set.operator_cells_of(lambdas)?;
        self.velocity_in_cells(state.amplitudes(), lambdas, &cells, state.time())
    }

    /// Velocity with the cell tuple fixed; lambdas may sit outside their cells,
    /// where the affine in-cell field is extended.
    pub(crate) fn velocity_in_cells(
        &self,
        psi: &CVector,
        lambdas: &[f64],
        cells: &[usize],
        time: f64,
    ) -> Result<Vec<f64>> {
        let p = probability_of(&self.set, psi, cells);
        if !(p > self.node_floor) {
            return Err(Error::Node {
                cells: cells.to_vec(),
                probability: p,
                time,
            });
        }
        (0..self.set.len())
            .map(|ell| Ok(self.current_checked(psi, ell, lambdas, cells)? / p))
            .collect()
    }

    pub(crate) fn probability_in_cells(&self, psi: &CVector, cells: &[usize]) -> f64 {
        probability_of(&self.set, psi, cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beables::{validate_commuting_set, BeableOperator};
    use crate::linalg::{diagonalize, evolve, expectation, pauli, random, Operator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rabi_field(omega: f64) -> VelocityField {
        let set = validate_commuting_set(vec![
            BeableOperator::from_hermitian("sz", &pauli::z(), 1e-9, None).unwrap(),
        ])
        .unwrap();
        let prop = diagonalize(&pauli::x().scale(omega / 2.0)).unwrap();
        VelocityField::new(set, prop, Symmetrization::SymmetricAverage, DEFAULT_NODE_FLOOR).unwrap()
    }

    fn two_qubit_set() -> BeableSet {
        let id = Operator::identity(2);
        validate_commuting_set(vec![
            BeableOperator::from_hermitian("z1", &pauli::z().kron(&id), 1e-9, None).unwrap(),
            BeableOperator::from_hermitian("z2", &id.kron(&pauli::z()), 1e-9, None).unwrap(),
        ])
        .unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, dim: usize, beables: usize, sym: Symmetrization) -> VelocityField {
        // Functions of one random Hermitian matrix commute with each other.
        let base = diagonalize(&random::hermitian(rng, dim)).unwrap();
        let u = base.eigenvectors().clone();
        let list = (0..beables)
            .map(|k| {
                let d = crate::linalg::CVector::from_fn(dim, |_, _| C64::new(rng.random_range(0..3) as f64, 0.0));
                let m = &u * crate::linalg::CMatrix::from_diagonal(&d) * u.adjoint();
                BeableOperator::from_hermitian(format!("b{k}"), &Operator::hermitian(m).unwrap(), 1e-9, None).unwrap()
            })
            .collect();
        let set = validate_commuting_set(list).unwrap();
        let prop = diagonalize(&random::hermitian(rng, dim)).unwrap();
        VelocityField::new(set, prop, sym, DEFAULT_NODE_FLOOR).unwrap()
    }

    #[test]
    fn weights_match_three_beable_expansion() {
        let w = placement_weights(3);
        // Placements with 0, 1, 2 projectors on the left: {2/6}, {1/6, 1/6}, {2/6}.
        assert!((w[0] - 2.0 / 6.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((w[2] - 2.0 / 6.0).abs() < 1e-15);
        let total = w[0] + 2.0 * w[1] + w[2];
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(placement_weights(1), vec![1.0]);
    }

    #[test]
    fn probability_examples() {
        let set = two_qubit_set();
        let upup = QuantumState::basis(4, 0).unwrap();
        for cells in set.cell_tuples() {
            let p = quantum_probability(&upup, &set, &cells).unwrap();
            let expected = if cells == [1, 1] { 1.0 } else { 0.0 };
            assert_eq!(p, expected, "{cells:?}");
        }
        assert!(quantum_probability(&upup, &set, &[2, 0]).is_err());
        assert!(quantum_probability(&upup, &set, &[0]).is_err());

        let field = rabi_field(1.0);
        let plus = QuantumState::normalized(
            crate::linalg::CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]),
            0.0,
        )
        .unwrap();
        assert!((quantum_probability(&plus, field.set(), &[0]).unwrap() - 0.5).abs() < 1e-15);

        let omega = 1.0;
        for k in 0..20 {
            let t = 0.4 * k as f64;
            let s = evolve(&QuantumState::basis(2, 0).unwrap(), field.propagator(), t).unwrap();
            let p = quantum_probability(&s, field.set(), &[1]).unwrap();
            assert!((p - (omega * t / 2.0).cos().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_beable_current_is_half_omega_sigma_y() {
        let omega = 1.4;
        let field = rabi_field(omega);
        let up = QuantumState::basis(2, 0).unwrap();
        for k in 0..20 {
            let t = 0.3 * k as f64;
            let s = evolve(&up, field.propagator(), t).unwrap();
            let j = field.symmetrized_current(&s, 0, &LambdaConfig::new(vec![0.5])).unwrap();
            let sy = expectation(&s, &pauli::y()).unwrap().re;
            assert!((sy + (omega * t).sin()).abs() < 1e-12);
            assert!((j - omega / 2.0 * sy).abs() < 1e-12);

            let p = quantum_probability(&s, field.set(), &[1]).unwrap();
            if p > 1e-9 {
                let v = field.velocity(&s, &LambdaConfig::new(vec![0.5])).unwrap();
                assert!((v[0] - omega / 2.0 * (-(omega * t).sin()) / p).abs() < 1e-9 * (1.0 / p));
            }
            let top = field.symmetrized_current(&s, 0, &LambdaConfig::new(vec![1.5])).unwrap();
            assert!(top.abs() < 1e-15);
        }
    }

    #[test]
    fn velocity_reports_node_with_cells() {
        let field = rabi_field(1.0);
        let up = QuantumState::basis(2, 0).unwrap();
        match field.velocity(&up, &LambdaConfig::new(vec![0.2])).unwrap_err() {
            Error::Node { cells, probability, .. } => {
                assert_eq!(cells, vec![0]);
                assert_eq!(probability, 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn conserved_beables_have_zero_velocity() {
        let set = two_qubit_set();
        let h = pauli::z().kron(&pauli::z()).scale(0.7);
        let field = VelocityField::new(set, diagonalize(&h).unwrap(), Symmetrization::SymmetricAverage, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random::state(&mut rng, 4);
        for _ in 0..20 {
            let l = LambdaConfig::new(vec![rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)]);
            let v = field.velocity(&s, &l).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1e-14), "{v:?}");
        }
    }

    #[test]
    fn vector_route_matches_dense_current_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let field = random_field(&mut rng, 6, 1, Symmetrization::SymmetricAverage);
        let s = random::state(&mut rng, 6);
        let b = &field.set().beables()[0];
        for _ in 0..30 {
            let lambda = rng.random_range(-0.5..=b.upper());
            let dense = expectation(&s, &b.current_operator(lambda, field.propagator()).unwrap()).unwrap();
            let j = field.symmetrized_current(&s, 0, &LambdaConfig::new(vec![lambda])).unwrap();
            assert!((dense.re - j).abs() < 1e-12);
            assert!(dense.im.abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_average_matches_explicit_three_beable_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let field = random_field(&mut rng, 8, 3, Symmetrization::SymmetricAverage);
        let s = random::state(&mut rng, 8);
        let set = field.set();
        let lambdas: Vec<f64> = set.beables().iter().map(|b| rng.random_range(-0.5..b.upper())).collect();
        let cells = set.cells_of(&LambdaConfig::new(lambdas.clone())).unwrap();
        let j1 = set.beables()[0].current_operator(lambdas[0], field.propagator()).unwrap();
        let p2 = set.beables()[1].projector(cells[1]).unwrap();
        let p3 = set.beables()[2].projector(cells[2]).unwrap();
        let (j, p2, p3) = (j1.matrix(), p2.matrix(), p3.matrix());
        let op = (j * p2 * p3).scale(2.0) + p2 * j * p3 + p3 * j * p2 + (p2 * p3 * j).scale(2.0);
        let op = Operator::new(op.unscale(6.0)).unwrap();
        let expected = expectation(&s, &op).unwrap();
        let got = field.symmetrized_current(&s, 0, &LambdaConfig::new(lambdas)).unwrap();
        assert!((expected.re - got).abs() < 1e-12);
        assert!(expected.im.abs() < 1e-12);
    }

    #[test]
    fn currents_are_real_and_velocity_affine_in_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for sym in [Symmetrization::SymmetricAverage, Symmetrization::OrderedRealPart] {
            for _ in 0..10 {
                let dim = rng.random_range(2..=8);
                let l = rng.random_range(1..=3);
                let field = random_field(&mut rng, dim, l, sym);
                let s = random::state(&mut rng, dim);
                let set = field.set();
                let lambdas: Vec<f64> = set.beables().iter().map(|b| rng.random_range(-0.5..b.upper())).collect();
                let config = LambdaConfig::new(lambdas.clone());
                for ell in 0..l {
                    let raw = field.current_with_residue(&s, ell, &config).unwrap();
                    assert!(raw.im.abs() <= 1e-9);
                }
                let cells = set.cells_of(&config).unwrap();
                if quantum_probability(&s, set, &cells).unwrap() <= 1e-6 {
                    continue;
                }
                for ell in 0..l {
                    let n = cells[ell] as f64;
                    let at = |x: f64| {
                        let mut ls = lambdas.clone();
                        ls[ell] = x;
                        field.velocity(&s, &LambdaConfig::new(ls)).unwrap()[ell]
                    };
                    let (a, b, c) = (n - 0.4, n - 0.1, n + 0.35);
                    let (va, vb, vc) = (at(a), at(b), at(c));
                    let interpolated = va + (vc - va) * (b - a) / (c - a);
                    assert!((vb - interpolated).abs() <= 1e-10 * va.abs().max(vc.abs()).max(1.0));
                }
            }
        }
    }

    #[test]
    fn field_rejects_mismatched_dimensions() {
        let set = two_qubit_set();
        let prop = diagonalize(&pauli::x()).unwrap();
        assert!(VelocityField::new(set, prop, Symmetrization::default(), 1e-12).is_err());
    }
}
