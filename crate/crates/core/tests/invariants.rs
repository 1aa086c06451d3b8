use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beable_core::dynamics::{cell_distribution, quantum_probability};
use beable_core::linalg::{random, CMatrix, CVector, C64};
use beable_core::verification::{continuity_residual, level_value, sample_initial, single_beable_levelset};
use beable_core::{
    diagonalize, evolve, integrate_at_times, integrate_trajectory, validate_commuting_set, BeableOperator,
    LambdaConfig, Operator, QuantumState, Symmetrization, Tolerances, TrajectoryStatus, VelocityField,
};

/// `n_beables` commuting beables with small integer spectra in a shared random eigenbasis.
fn system(seed: u64, dim: usize, n_beables: usize, sym: Symmetrization) -> (VelocityField, QuantumState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = diagonalize(&random::hermitian(&mut rng, dim)).unwrap().eigenvectors().clone();
    let beables = (0..n_beables)
        .map(|k| {
            let d = CVector::from_fn(dim, |i, _| C64::new(((i * (k + 2) + k) % 3) as f64, 0.0));
            let op = Operator::hermitian(&u * CMatrix::from_diagonal(&d) * u.adjoint()).unwrap();
            BeableOperator::from_hermitian(format!("b{k}"), &op, 1e-9, None).unwrap()
        })
        .collect();
    let field = VelocityField::new(
        validate_commuting_set(beables).unwrap(),
        diagonalize(&random::hermitian(&mut rng, dim)).unwrap(),
        sym,
        1e-12,
    )
    .unwrap();
    (field, random::state(&mut rng, dim))
}

fn symmetrization() -> impl Strategy<Value = Symmetrization> {
    prop_oneof![Just(Symmetrization::SymmetricAverage), Just(Symmetrization::OrderedRealPart)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distribution_sums_to_one(seed in any::<u64>(), dim in 2usize..=8, l in 1usize..=3, t in -5.0f64..5.0) {
        let (field, state) = system(seed, dim, l, Symmetrization::default());
        let s = evolve(&state, field.propagator(), t).unwrap();
        let p = cell_distribution(&s, field.set()).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(p.iter().all(|&x| x >= -1e-14));
    }

    #[test]
    fn sampled_cells_are_occupied(seed in any::<u64>(), dim in 2usize..=8, l in 1usize..=3) {
        let (field, state) = system(seed, dim, l, Symmetrization::default());
        let lambdas = sample_initial(&state, field.set(), seed).unwrap();
        let cells = field.set().cells_of(&lambdas).unwrap();
        prop_assert!(quantum_probability(&state, field.set(), &cells).unwrap() > 0.0);
    }

    #[test]
    fn continuity_holds(seed in any::<u64>(), dim in 2usize..=8, l in 1usize..=3, sym in symmetrization(),
                        t in 0.0f64..5.0, u in proptest::collection::vec(0.0f64..1.0, 3)) {
        let (field, state) = system(seed, dim, l, sym);
        let s = evolve(&state, field.propagator(), t).unwrap();
        let lambdas = LambdaConfig::new(
            field.set().beables().iter().zip(&u).map(|(b, &x)| -0.5 + x * b.cells() as f64).collect(),
        );
        if let Some(r) = continuity_residual(&field, &s, &lambdas, 1e-5).unwrap() {
            prop_assert!(r <= 1e-6, "residual {}", r);
        }
    }

    #[test]
    fn forward_backward_round_trip(seed in any::<u64>(), dim in 2usize..=6, l in 1usize..=2, sym in symmetrization()) {
        let (field, state) = system(seed, dim, l, sym);
        let lambda0 = sample_initial(&state, field.set(), seed).unwrap();
        let tol = Tolerances::default();
        let fwd = integrate_at_times(&field, &state, &lambda0, &[3.0], &tol).unwrap();
        prop_assume!(fwd.status == TrajectoryStatus::Completed);
        let end = evolve(&state, field.propagator(), 3.0).unwrap();
        let back = integrate_at_times(&field, &end, &fwd.samples[0].lambdas, &[0.0], &tol).unwrap();
        prop_assume!(back.status == TrajectoryStatus::Completed);
        for (a, b) in lambda0.iter().zip(back.samples[0].lambdas.iter()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_beable_follows_level_set(seed in any::<u64>(), dim in 2usize..=8) {
        let (field, state) = system(seed, dim, 1, Symmetrization::default());
        let b = &field.set().beables()[0];
        let lambda0 = sample_initial(&state, field.set(), seed).unwrap();
        let level0 = level_value(&state, b, lambda0[0]).unwrap();
        let traj = integrate_trajectory(&field, &state, &lambda0, 5.0, 0.25, &Tolerances::default()).unwrap();
        prop_assume!(traj.status == TrajectoryStatus::Completed);
        for s in &traj.samples {
            let oracle = single_beable_levelset(&state, b, field.propagator(), lambda0[0], s.t).unwrap();
            prop_assert!((oracle - s.lambdas[0]).abs() <= 1e-5);
            let now = evolve(&state, field.propagator(), s.t).unwrap();
            prop_assert!((level_value(&now, b, s.lambdas[0]).unwrap() - level0).abs() <= 1e-6);
        }
    }
}
