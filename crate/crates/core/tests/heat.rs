use eki_core::heat::{
    assemble_forward, draw_initial_ensemble, observe_forcing, sample_kl_field, HeatConfig, KlExpansion, KlFieldSpec,
};
use eki_core::linalg::{read_matrix, write_matrix};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn full_scale() -> HeatConfig {
    HeatConfig { h: 0.01, dt: 0.05, horizon: 0.3, obs_per_step: 99 }
}

/// Crank–Nicolson with dense matrices and an LU solve per step.
fn dense_oracle(cfg: &HeatConfig, f: &DVector<f64>) -> DVector<f64> {
    let n = cfg.n_interior();
    let l = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    }) / (cfg.h * cfg.h);
    let id = DMatrix::<f64>::identity(n, n) / cfg.dt;
    let lhs = (&id + &l * 0.5).lu();
    let rhs = &id - &l * 0.5;
    let mut u = DVector::zeros(n);
    let mut out = Vec::new();
    for _ in 0..cfg.n_steps() {
        u = lhs.solve(&(&rhs * &u + f)).unwrap();
        out.extend(u.iter().copied());
    }
    DVector::from_vec(out)
}

#[test]
fn assembly_matches_dense_time_stepping() {
    let cfg = full_scale();
    let a = assemble_forward(&cfg).unwrap();
    for f in [
        DVector::from_element(99, 1.0),
        DVector::from_fn(99, |i, _| ((i as f64) * 0.37).sin()),
    ] {
        let oracle = dense_oracle(&cfg, &f);
        let scale = oracle.amax();
        assert!((&a * &f - &oracle).amax() <= 1e-12 * scale.max(1.0));
        assert!((observe_forcing(&cfg, f.as_slice()).unwrap() - &oracle).amax() <= 1e-12 * scale.max(1.0));
    }
}

#[test]
fn constant_forcing_approaches_steady_state() {
    // −u'' = 1 with zero boundary gives u = x(1 − x)/2; heat equation at T = 20 is there
    let cfg = HeatConfig { h: 0.05, dt: 0.05, horizon: 20.0, obs_per_step: 19 };
    let obs = observe_forcing(&cfg, &[1.0; 19]).unwrap();
    let last = obs.rows(obs.len() - 19, 19);
    for (p, x) in cfg.grid().iter().enumerate() {
        assert!((last[p] - x * (1.0 - x) / 2.0).abs() < 1e-6, "node {p}");
    }
}

#[test]
fn forward_is_linear_exactly() {
    let cfg = HeatConfig { h: 0.1, dt: 0.05, horizon: 0.1, obs_per_step: 9 };
    let a = assemble_forward(&cfg).unwrap();
    let f1 = DVector::from_fn(9, |i, _| i as f64);
    let f2 = DVector::from_fn(9, |i, _| 1.0 / (1.0 + i as f64));
    let lhs = &a * (&f1 + &f2);
    let rhs = &a * &f1 + &a * &f2;
    assert!((lhs - rhs).amax() < 1e-15);
}

#[test]
fn operator_fixture_roundtrip() {
    let cfg = HeatConfig { h: 0.1, dt: 0.05, horizon: 0.1, obs_per_step: 9 };
    let a = assemble_forward(&cfg).unwrap();
    let mut buf = Vec::new();
    write_matrix(&mut buf, &a).unwrap();
    assert_eq!(read_matrix(buf.as_slice()).unwrap(), a);
}

#[test]
fn covariance_and_truncation() {
    let spec = KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 8);
    let c = spec.covariance_matrix() * 0.01;
    assert!((&c - c.transpose()).amax() <= 1e-10 * c.amax());
    let eig = c.clone().symmetric_eigen();
    assert!(eig.eigenvalues.min() >= -1e-10 * eig.eigenvalues.max());
    let kl = KlExpansion::new(&spec).unwrap();
    assert!(kl.captured_fraction() >= 0.999, "{}", kl.captured_fraction());
    // top eigenvalues agree with an independent dense eigensolve
    let mut all: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    for i in 0..8 {
        assert!((kl.eigenvalues()[i] - all[i]).abs() <= 1e-10 * all[0]);
    }
}

#[test]
fn pointwise_variance_monte_carlo() {
    let spec = KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 8);
    let kl = KlExpansion::new(&spec).unwrap();
    let mid = 49;
    let expect = kl.pointwise_variance()[mid];
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let n = 10_000;
    let draws: Vec<f64> = (0..n).map(|_| kl.sample(&mut rng)[mid]).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((var - expect).abs() <= 0.05 * expect, "{var} vs {expect}");
    // truncated variance is close to σ² in the interior
    assert!((expect - 10.0).abs() < 0.5);
}

#[test]
fn sampling_one_off_uses_the_spec() {
    let spec = KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 8);
    let a = sample_kl_field(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = KlExpansion::new(&spec).unwrap().sample(&mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

#[test]
fn initial_ensemble_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let kl18 = KlExpansion::new(&KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 18)).unwrap();
    assert_eq!(draw_initial_ensemble(&kl18, 20, &mut rng).unwrap().centered_rank(), 18);
    let kl8 = KlExpansion::new(&KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 8)).unwrap();
    assert_eq!(draw_initial_ensemble(&kl8, 5, &mut rng).unwrap().centered_rank(), 4);
}
