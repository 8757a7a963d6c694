use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sfield::basis::BasisSpec;
use sfield::field::{autocovariance, center, FunctionalGridSample};
use sfield::normtest::{jb_test, VariancePolicy};
use sfield::numcore::RealMatrix;
use sfield::pipeline::{run_pipeline, run_test_pipeline, TestConfig};
use sfield::sfpca::{compute_scores, BoundaryMode, ScoreField};
use sfield::simulate::{
    generate_operators, replication_rng, simulate_sar, Distribution, InnovationSpec, DEFAULT_SEED,
};
use sfield::Error;

fn null_sample(dims: &[usize], rep: usize) -> FunctionalGridSample {
    let ops = generate_operators(DEFAULT_SEED).unwrap();
    let spec = InnovationSpec::new(Distribution::Gaussian, 15).unwrap();
    simulate_sar(
        dims,
        &ops,
        &spec,
        50,
        &mut replication_rng(DEFAULT_SEED, 0, rep),
    )
    .unwrap()
}

#[test]
fn p_value_is_bit_reproducible() {
    let x = null_sample(&[20, 20], 1);
    let a = run_test_pipeline(&x, &TestConfig::default()).unwrap();
    let b = run_test_pipeline(&null_sample(&[20, 20], 1), &TestConfig::default()).unwrap();
    assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
    assert_eq!(a, b);
}

#[test]
fn tuning_echo_reproduces_the_run() {
    let x = null_sample(&[18, 22], 2);
    let first = run_test_pipeline(&x, &TestConfig::default()).unwrap();
    let echo = &first.tuning;
    assert_eq!(echo.dims, vec![18, 22]);
    assert_eq!(echo.k, 15);
    assert_eq!(echo.basis, "fourier");
    assert_eq!(echo.p, first.p);
    assert_eq!(echo.l_prime, 5);
    assert!(echo.explained >= 0.85);
    let again = TestConfig {
        q: Some(echo.q.clone()),
        grid_t: Some(echo.grid_t),
        l: Some(echo.l),
        l_prime: Some(echo.l_prime),
        p: Some(echo.p),
        ..TestConfig::default()
    };
    let second = run_test_pipeline(&x, &again).unwrap();
    assert_eq!(first.p_value.to_bits(), second.p_value.to_bits());
}

#[test]
fn scalar_data_reduce_to_the_spatial_scalar_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = [15, 17];
    let n = 15 * 17;
    // dependent scalar field: moving sum of exponentials
    let e: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal).exp())
        .collect();
    let values: Vec<f64> = (0..n)
        .map(|s| e[s] + if s % 17 > 0 { 0.6 * e[s - 1] } else { 0.0 })
        .collect();
    let x = FunctionalGridSample::new(
        &dims,
        RealMatrix::from_row_major(n, 1, values.clone()).unwrap(),
        BasisSpec::fourier(1).unwrap(),
    )
    .unwrap();
    let out = run_pipeline(&x, &TestConfig::default()).unwrap();
    assert_eq!(out.filters.max_lag(), 0);
    let mean = values.iter().sum::<f64>() / n as f64;
    let direct = ScoreField::new(&dims, vec![values.iter().map(|v| v - mean).collect()]).unwrap();
    let scalar = jb_test(&direct, out.report.tuning.l_prime, VariancePolicy::Floor).unwrap();
    let rel = (out.report.t_hat - scalar.t_hat).abs() / scalar.t_hat;
    assert!(rel < 1e-10, "relative difference {rel}");
    assert!(out.report.p_value < 0.05);
}

#[test]
fn strong_alternative_is_detected() {
    let ops = generate_operators(DEFAULT_SEED).unwrap();
    let spec = InnovationSpec::new(
        Distribution::Su {
            skewness: 1.0,
            kurtosis: 6.0,
        },
        15,
    )
    .unwrap();
    let x = simulate_sar(&[50, 50], &ops, &spec, 50, &mut replication_rng(3, 0, 0)).unwrap();
    let report = run_test_pipeline(&x, &TestConfig::default()).unwrap();
    assert!(report.p_value < 0.05, "p-value {}", report.p_value);
}

#[test]
fn errors_carry_stage_labels() {
    let x = null_sample(&[10, 10], 3);
    let err = run_test_pipeline(
        &x,
        &TestConfig {
            p: Some(0),
            ..TestConfig::default()
        },
    )
    .unwrap_err();
    assert!(matches!(
        err,
        Error::Stage {
            stage: "level selection",
            ..
        }
    ));
    assert!(matches!(err.root(), Error::InvalidConfig(_)));

    let err = run_test_pipeline(
        &x,
        &TestConfig {
            q: Some(vec![12.0, 3.0]),
            ..TestConfig::default()
        },
    )
    .unwrap_err();
    assert!(
        err.to_string().starts_with("spectral density estimation"),
        "{err}"
    );

    let err = run_test_pipeline(
        &x,
        &TestConfig {
            l: Some(5),
            boundary: BoundaryMode::Strict,
            ..TestConfig::default()
        },
    )
    .unwrap_err();
    assert!(err.to_string().starts_with("score computation"), "{err}");
}

#[test]
fn statistic_ignores_filter_signs() {
    let x = null_sample(&[16, 16], 4);
    let out = run_pipeline(
        &x,
        &TestConfig {
            p: Some(3),
            ..TestConfig::default()
        },
    )
    .unwrap();
    let flipped = out.filters.scaled(&[-1.0, 1.0, -1.0]);
    let scores = compute_scores(&center(&x), &flipped, BoundaryMode::Omit).unwrap();
    let report = jb_test(&scores, out.report.tuning.l_prime, VariancePolicy::Floor).unwrap();
    assert!((report.t_hat - out.report.t_hat).abs() < 1e-10 * out.report.t_hat.max(1.0));
}

#[test]
fn strict_boundary_crops_the_grid() {
    let x = null_sample(&[20, 20], 5);
    let cfg = TestConfig {
        l: Some(2),
        boundary: BoundaryMode::Strict,
        ..TestConfig::default()
    };
    let report = run_test_pipeline(&x, &cfg).unwrap();
    assert!(report.tuning.strict_boundary);
    assert!(report.p_value.is_finite());
}

#[test]
fn three_levels_explain_most_variance_in_the_null_model() {
    let x = null_sample(&[50, 50], 6);
    let out = run_pipeline(&x, &TestConfig::default()).unwrap();
    let three: f64 = out.proportions.iter().take(3).sum();
    assert!(
        (three - 0.85).abs() <= 0.05,
        "first three levels explain {three}"
    );
}

#[test]
fn default_operators_give_decaying_dependence() {
    let x = center(&null_sample(&[120, 120], 7));
    let norm = |h: [i64; 2]| autocovariance(&x, &h).unwrap().matrix.frobenius_norm();
    let iid_level = 5.0 / 120.0 * autocovariance(&x, &[0, 0]).unwrap().matrix.frobenius_norm();
    assert!(norm([1, 0]) > iid_level);
    assert!(norm([0, 1]) > iid_level);
    assert!(norm([3, 0]) < norm([1, 0]));
    assert!(norm([0, 3]) < norm([0, 1]));
}

#[test]
fn bspline_samples_run_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dims = [14, 14];
    let n = 14 * 14;
    let coeffs: Vec<f64> = (0..n * 6).map(|_| rng.sample(StandardNormal)).collect();
    let x = FunctionalGridSample::new(
        &dims,
        RealMatrix::from_row_major(n, 6, coeffs).unwrap(),
        BasisSpec::bspline(6).unwrap(),
    )
    .unwrap();
    let report = run_test_pipeline(&x, &TestConfig::default()).unwrap();
    assert_eq!(report.tuning.basis, "bspline");
    assert!((0.0..=1.0).contains(&report.p_value));
}
