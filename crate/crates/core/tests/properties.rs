use std::sync::Arc;

use eki_core::dynamics::{FlowSpec, Selector, Subsampling, Variant};
use eki_core::index_process::{next_index, LearningRateSchedule};
use eki_core::problem::{empirical_covariance, partition, DataPartition, Ensemble, LinearProblem};
use eki_core::regularization::{potential, potential_gradient, SubsampledProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_map(DVector::from_vec)
}

/// Whitened problem with `n_sub` blocks of 2 rows in dimension 3.
fn subsampled(n_sub: usize) -> impl Strategy<Value = (SubsampledProblem, DMatrix<f64>, DVector<f64>)> {
    (matrix(2 * n_sub, 3), vector(2 * n_sub), 0.1..20.0f64).prop_map(move |(a, y, alpha)| {
        let p = LinearProblem::whitened(a.clone(), y.clone()).unwrap();
        let part = DataPartition::uniform(n_sub, 2).unwrap();
        (SubsampledProblem::new(&p, part, alpha, &DMatrix::identity(3, 3)).unwrap(), a, y)
    })
}

proptest! {
    #[test]
    fn potential_splits_over_subsets((sp, _, _) in subsampled(4), theta in vector(3)) {
        let full = potential(sp.full(), &theta).unwrap();
        let sum: f64 = sp.subsets().iter().map(|s| potential(s, &theta).unwrap()).sum();
        prop_assert!((full - sum).abs() <= 1e-10 * (1.0 + full));
    }

    #[test]
    fn gradients_split_over_subsets((sp, _, _) in subsampled(3), theta in vector(3)) {
        let full = potential_gradient(sp.full(), &theta).unwrap();
        let sum = sp.subsets().iter().fold(DVector::zeros(3), |acc, s| acc + potential_gradient(s, &theta).unwrap());
        prop_assert!((&full - sum).amax() <= 1e-10 * (1.0 + full.amax()));
    }

    #[test]
    fn gradient_matches_finite_differences((sp, _, _) in subsampled(2), theta in vector(3)) {
        let p = sp.full();
        let g = potential_gradient(p, &theta).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (potential(p, &up).unwrap() - potential(p, &dn).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "k={} fd={} g={}", k, fd, g[k]);
        }
    }

    #[test]
    fn blocks_restack_to_the_full_problem((_, a, y) in subsampled(3)) {
        let p = LinearProblem::whitened(a.clone(), y.clone()).unwrap();
        let blocks = partition(&p, &DataPartition::uniform(3, 2).unwrap()).unwrap();
        let mut row = 0;
        for (a_i, y_i) in &blocks {
            prop_assert_eq!(a_i, &a.rows(row, a_i.nrows()).into_owned());
            prop_assert_eq!(y_i, &y.rows(row, y_i.len()).into_owned());
            row += a_i.nrows();
        }
        prop_assert_eq!(row, a.nrows());
    }

    #[test]
    fn covariance_is_psd_with_bounded_rank(m in matrix(4, 3)) {
        let c = empirical_covariance(&Ensemble::new(m).unwrap());
        let scale = c.amax().max(1e-300);
        prop_assert!((&c - c.transpose()).amax() <= 1e-14 * scale);
        let eig = c.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-11 * scale);
        let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-10 * scale).count();
        prop_assert!(rank <= 2);
    }

    #[test]
    fn mean_drift_is_drift_of_mean((sp, _, _) in subsampled(2), m in matrix(3, 4), t in 0.0..5.0f64) {
        let spec = FlowSpec::new(Variant::Teki, Subsampling::None, Arc::new(sp)).unwrap();
        let ens = Ensemble::new(m).unwrap();
        let drift = spec.rhs(&ens, t, &Selector::Full).unwrap();
        let mean_drift = drift.column_mean();
        // for a linear gradient the mean moves along −Ĉ∇Φ(θ̄)
        let c = empirical_covariance(&ens);
        let g = potential_gradient(spec.problem().full(), &ens.mean()).unwrap();
        let expect = -(c * g);
        prop_assert!((&mean_drift - &expect).amax() <= 1e-13 * (1.0 + expect.amax()));
    }

    #[test]
    fn jump_target_differs_from_current(n_sub in 2usize..10, cur in 0usize..10, seed in any::<u64>()) {
        let cur = cur % n_sub;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = next_index(cur, n_sub, &mut rng).unwrap();
        prop_assert!(k < n_sub && k != cur);
    }

    #[test]
    fn waiting_times_invert_the_hazard(a in 0.01..10.0f64, b in 0.01..10.0f64, t0 in 0.0..2.0f64, e in 1e-6..20.0f64) {
        for sched in [LearningRateSchedule::Exponential { a, b }, LearningRateSchedule::Reciprocal { a, b }] {
            let s = sched.waiting_time_from_exp(t0, e);
            prop_assert!(s > 0.0);
            let back = sched.integrated_rate(t0, s);
            prop_assert!((back - e).abs() <= 1e-9 * e.max(1.0), "{:?}: {} vs {}", sched, back, e);
        }
    }
}
