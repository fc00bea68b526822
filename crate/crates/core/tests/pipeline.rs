//! End-to-end checks on the simulation design that sit between the unit
//! tests and the acceptance suite.

use dte_core::estimation::{estimate_adjusted, make_folds, quantile_grid, AdjustedEstimate};
use dte_core::inference::{
    bootstrap_band, influence, se_reduction, BootstrapConfig, Functional,
};
use dte_core::learners::{LearnerKind, Profile};
use dte_core::model::{validate_experiment, Method};
use dte_core::simulation::{classification_metrics, generate, outcome_mean, DgpConfig};
use dte_core::{estimation::default_quantile_probs, PteBoundary};

#[test]
fn mean_outcome_difference_matches_closed_form() {
    // E[(S + V)^2] with S the sum of 18 uniforms and V the sum of two more:
    // the treated-minus-control gap is 2 E[S] E[V] + E[V^2] = 18 + 7/6.
    let closed = 19.0 + 1.0 / 6.0;
    let data = generate(&DgpConfig {
        n: 400_000,
        seed: 17,
        ..DgpConfig::default()
    })
    .unwrap();
    let mut sums = [0.0; 2];
    let mut squares = [0.0; 2];
    let mut counts = [0.0; 2];
    for (&w, &y) in data.arms().iter().zip(data.outcomes()) {
        sums[w - 1] += y;
        squares[w - 1] += y * y;
        counts[w - 1] += 1.0;
    }
    let mean = |a: usize| sums[a] / counts[a];
    let var = |a: usize| squares[a] / counts[a] - mean(a).powi(2);
    let diff = mean(1) - mean(0);
    let se = (var(0) / counts[0] + var(1) / counts[1]).sqrt();
    assert!((diff - closed).abs() < 4.0 * se, "{diff} vs {closed} (se {se})");

    // The noiseless regression function agrees on a single point too.
    let x = [0.5; 20];
    assert!((outcome_mean(&x, true) - outcome_mean(&x, false) - 19.0).abs() < 1e-12);
}

#[test]
fn monotone_network_classifies_better_than_linear() {
    let data = generate(&DgpConfig {
        seed: 23,
        ..DgpConfig::default()
    })
    .unwrap();
    let grid = quantile_grid(data.outcomes(), &default_quantile_probs()).unwrap();
    let plan = make_folds(data.n(), 2, 23).unwrap();
    let accuracy = |method: Method| {
        let kind = LearnerKind::from_method(method, Profile::Simulation).unwrap();
        let est = estimate_adjusted(&data, &grid, &kind, &plan).unwrap();
        classification_metrics(&est.gamma, &data, &grid).unwrap()
    };
    let linear = accuracy(Method::LinearAdjusted);
    let monotone = accuracy(Method::NnMultiMonotone);
    assert!(
        monotone.accuracy > linear.accuracy,
        "monotone {monotone:?} vs linear {linear:?}"
    );
    for m in [&linear, &monotone] {
        assert!(m.accuracy > 0.5 && m.precision > 0.5 && m.recall > 0.5);
    }
}

#[test]
fn adjusted_bootstrap_variance_matches_influence_second_moment() {
    let data = generate(&DgpConfig {
        n: 1500,
        seed: 29,
        ..DgpConfig::default()
    })
    .unwrap();
    let grid = quantile_grid(data.outcomes(), &default_quantile_probs()).unwrap();
    let plan = make_folds(data.n(), 2, 29).unwrap();
    let est = estimate_adjusted(&data, &grid, &LearnerKind::linear(), &plan).unwrap();
    let stats = validate_experiment(&data, &grid).unwrap();
    let psi = influence(&data, &grid, &est.theta, &est.gamma, &stats).unwrap();
    let n = data.n() as f64;
    let config = BootstrapConfig {
        repetitions: 4000,
        seed: 3,
        ..BootstrapConfig::default()
    };
    let functional = Functional::Cdf { arm: 2 };
    let band = bootstrap_band(&data, &grid, &est, &functional, &config).unwrap();
    for j in 0..grid.len() {
        let second: f64 = (0..data.n()).map(|i| psi.psi[[i, 1, j]].powi(2)).sum::<f64>() / n;
        let analytic = (second / n).sqrt();
        let rel = (band.se[j] - analytic).abs() / analytic;
        assert!(rel < 0.08, "location {j}: bootstrap {} vs {analytic}", band.se[j]);
    }
}

#[test]
fn adjustment_shrinks_dte_standard_errors() {
    let data = generate(&DgpConfig {
        seed: 31,
        ..DgpConfig::default()
    })
    .unwrap();
    let grid = quantile_grid(data.outcomes(), &default_quantile_probs()).unwrap();
    let plan = make_folds(data.n(), 2, 31).unwrap();
    let config = BootstrapConfig {
        repetitions: 2000,
        seed: 8,
        ..BootstrapConfig::default()
    };
    let functional = Functional::Dte { arm: 2, baseline: 1 };
    let base = AdjustedEstimate::empirical(&data, &grid).unwrap();
    let base_band = bootstrap_band(&data, &grid, &base, &functional, &config).unwrap();
    let est = estimate_adjusted(&data, &grid, &LearnerKind::linear(), &plan).unwrap();
    let band = bootstrap_band(&data, &grid, &est, &functional, &config).unwrap();
    let reduction = se_reduction(&base_band, &band).unwrap();
    let positive = reduction.iter().filter(|&&r| r > 0.0).count();
    assert!(positive >= 17, "{reduction:?}");
    assert!(reduction[9] > 15.0, "{reduction:?}");

    // PTE bands are the consecutive differences of the DTE point estimate.
    let pte = Functional::Pte {
        arm: 2,
        baseline: 1,
        boundary: PteBoundary::Consecutive,
    };
    let pte_band = bootstrap_band(&data, &grid, &est, &pte, &config).unwrap();
    assert_eq!(pte_band.len(), grid.len() - 1);
    for j in 0..pte_band.len() {
        let expected = band.point[j + 1] - band.point[j];
        assert!((pte_band.point[j] - expected).abs() < 1e-12);
    }
}
