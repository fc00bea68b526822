//! Empirical and regression-adjusted distribution functions, the
//! cross-fitting driver, and DTE / PTE contrasts.
//!
//! The adjusted estimator for arm `w` at location `y` is
//!
//! ```text
//! F(y) = 1/n_w * sum_{i: W_i = w} (1{Y_i <= y} - g_w(X_i, y))
//!      + 1/n   * sum_{i}          g_w(X_i, y)
//! ```
//!
//! where `g_w(X_i, .)` is predicted by a learner that never saw unit `i`.

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};
use crate::learners::{self, LearnerKind};
use crate::model::{
    indicator_labels, validate_experiment, CdfEstimate, ConditionalCdfMatrix, ExperimentData,
    LocationGrid, Method,
};
use crate::seed::derive_seed;

/// Random partition of the units into `L` folds whose sizes differ by at
/// most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub folds: usize,
    /// Fold id in `1..=L` per unit.
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    pub fn n(&self) -> usize {
        self.fold_assignment.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.fold_assignment {
            sizes[f - 1] += 1;
        }
        sizes
    }
}

/// Shuffles `0..n` with a seeded generator and deals units round-robin.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<CrossFitPlan> {
    if folds < 2 {
        return Err(DteError::InvalidConfig("cross-fitting needs at least 2 folds".into()));
    }
    if n < folds {
        return Err(DteError::TooFewUnits {
            needed: folds,
            got: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_assignment = vec![0; n];
    for (position, &unit) in order.iter().enumerate() {
        fold_assignment[unit] = position % folds + 1;
    }
    Ok(CrossFitPlan {
        folds,
        fold_assignment,
        seed,
    })
}

/// Cross-fitted predictions together with the CDF they imply.
#[derive(Debug, Clone)]
pub struct AdjustedEstimate {
    pub theta: CdfEstimate,
    pub gamma: ConditionalCdfMatrix,
    pub plan: Option<CrossFitPlan>,
    pub method: Method,
}

impl AdjustedEstimate {
    /// The empirical CDF expressed as an adjusted estimate with zero
    /// predictions, so both paths share the inference code.
    pub fn empirical(data: &ExperimentData, grid: &LocationGrid) -> Result<Self> {
        let gamma = ConditionalCdfMatrix::zeros(data.n_arms(), data.n(), grid.len());
        let mut est = adjusted_cdf(data, grid, gamma)?;
        est.theta.method = Method::Empirical;
        est.method = Method::Empirical;
        Ok(est)
    }
}

/// Share of each arm's outcomes at or below every location.
pub fn empirical_cdf(data: &ExperimentData, grid: &LocationGrid) -> Result<CdfEstimate> {
    let stats = validate_experiment(data, grid)?;
    let locations = grid.locations();
    let mut values = Array2::zeros((data.n_arms(), locations.len()));
    for (&w, &y) in data.arms().iter().zip(data.outcomes()) {
        // First location with y <= y_j; every later one counts too.
        let first = locations.partition_point(|&loc| loc < y);
        for j in first..locations.len() {
            values[[w - 1, j]] += 1.0;
        }
    }
    for (w, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let n_w = stats.counts[w] as f64;
        row.mapv_inplace(|c| c / n_w);
    }
    Ok(CdfEstimate {
        values,
        method: Method::Empirical,
    })
}

/// Fits one learner per `(arm, fold)` on the arm's units outside the fold
/// and predicts the fold's units for every arm's model.
///
/// Per-location kinds fit `M` one-output models per `(arm, fold)`; joint
/// kinds fit once.
pub fn crossfit_gamma(
    data: &ExperimentData,
    grid: &LocationGrid,
    kind: &LearnerKind,
    plan: &CrossFitPlan,
) -> Result<ConditionalCdfMatrix> {
    validate_experiment(data, grid)?;
    let n = data.n();
    if plan.n() != n {
        return Err(DteError::ShapeMismatch(format!(
            "plan covers {} units, data has {n}",
            plan.n()
        )));
    }
    let labels = indicator_labels(data, grid);
    let m = grid.len();
    let k = data.n_arms();

    let mut jobs = Vec::with_capacity(k * plan.folds);
    for w in 1..=k {
        for fold in 1..=plan.folds {
            let train: Vec<usize> = (0..n)
                .filter(|&i| plan.fold_assignment[i] != fold && data.arms()[i] == w)
                .collect();
            if train.len() < 2 {
                return Err(DteError::EmptyTrainingArm { arm: w, fold });
            }
            let held_out: Vec<usize> = (0..n)
                .filter(|&i| plan.fold_assignment[i] == fold)
                .collect();
            jobs.push((w, fold, train, held_out));
        }
    }

    let x = data.covariates();
    let results: Vec<Result<(usize, Vec<usize>, Array2<f64>)>> = jobs
        .into_par_iter()
        .map(|(w, fold, train, held_out)| {
            let xt = x.select(Axis(0), &train);
            let yt = labels.select(Axis(0), &train);
            let seed = derive_seed(plan.seed, &[w as u64, fold as u64]);
            let fitted = learners::fit(kind, xt.view(), yt.view(), seed)?;
            let xh = x.select(Axis(0), &held_out);
            let pred = fitted.predict(xh.view())?;
            Ok((w, held_out, pred))
        })
        .collect();

    let mut predictions = Array3::zeros((k, n, m));
    for result in results {
        let (w, held_out, pred) = result?;
        for (row, &i) in held_out.iter().enumerate() {
            predictions
                .slice_mut(ndarray::s![w - 1, i, ..])
                .assign(&pred.row(row));
        }
    }
    Ok(ConditionalCdfMatrix {
        predictions,
        fold_assignment: plan.fold_assignment.clone(),
    })
}

/// Plugs cross-fitted predictions into the adjusted estimator. The output
/// is neither clipped to `[0, 1]` nor rearranged to be monotone.
pub fn adjusted_cdf(
    data: &ExperimentData,
    grid: &LocationGrid,
    gamma: ConditionalCdfMatrix,
) -> Result<AdjustedEstimate> {
    let stats = validate_experiment(data, grid)?;
    let (k, n, m) = (data.n_arms(), data.n(), grid.len());
    if gamma.shape() != (k, n, m) {
        return Err(DteError::ShapeMismatch(format!(
            "gamma is {:?}, expected ({k}, {n}, {m})",
            gamma.shape()
        )));
    }
    let labels = indicator_labels(data, grid);
    let mut values = Array2::zeros((k, m));
    for w in 1..=k {
        let preds = gamma.predictions.index_axis(Axis(0), w - 1);
        let n_w = stats.count(w) as f64;
        for j in 0..m {
            let mut own = 0.0;
            let mut own_pred = 0.0;
            let mut all_pred = 0.0;
            for i in 0..n {
                let p = preds[[i, j]];
                all_pred += p;
                if data.arms()[i] == w {
                    own += labels[[i, j]];
                    own_pred += p;
                }
            }
            values[[w - 1, j]] = own / n_w - own_pred / n_w + all_pred / n as f64;
        }
    }
    Ok(AdjustedEstimate {
        theta: CdfEstimate {
            values,
            method: Method::LinearAdjusted,
        },
        gamma,
        plan: None,
        method: Method::LinearAdjusted,
    })
}

/// Cross-fits `kind` and returns the adjusted estimate tagged with its
/// method.
pub fn estimate_adjusted(
    data: &ExperimentData,
    grid: &LocationGrid,
    kind: &LearnerKind,
    plan: &CrossFitPlan,
) -> Result<AdjustedEstimate> {
    let gamma = crossfit_gamma(data, grid, kind, plan)?;
    let mut est = adjusted_cdf(data, grid, gamma)?;
    est.method = kind.method();
    est.theta.method = kind.method();
    est.plan = Some(plan.clone());
    Ok(est)
}

fn check_arm(theta: &CdfEstimate, w: usize) -> Result<()> {
    if w == 0 || w > theta.n_arms() {
        return Err(DteError::ArmOutOfRange {
            label: w,
            row: 0,
            n_arms: theta.n_arms(),
        });
    }
    Ok(())
}

/// `F_w(y) - F_w'(y)` at every location.
pub fn dte(theta: &CdfEstimate, w: usize, w_prime: usize) -> Result<Vec<f64>> {
    if w == w_prime {
        return Err(DteError::SameArm(w));
    }
    check_arm(theta, w)?;
    check_arm(theta, w_prime)?;
    Ok(theta
        .arm(w)
        .iter()
        .zip(theta.arm(w_prime).iter())
        .map(|(a, b)| a - b)
        .collect())
}

/// How the first interval of a PTE vector is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PteBoundary {
    /// `M - 1` intervals `(y_{j-1}, y_j]`.
    #[default]
    Consecutive,
    /// Adds `(-inf, y_1]`, giving `M` entries whose first is the DTE at `y_1`.
    OpenLower,
}

/// Interval probabilities `F(y_j) - F(y_{j-1})` differenced across arms.
pub fn pte(
    theta: &CdfEstimate,
    w: usize,
    w_prime: usize,
    boundary: PteBoundary,
) -> Result<Vec<f64>> {
    let d = dte(theta, w, w_prime)?;
    pte_from_dte(&d, boundary)
}

/// PTE is linear in the CDF rows, so it equals the consecutive differences of
/// the DTE vector.
pub(crate) fn pte_from_dte(d: &[f64], boundary: PteBoundary) -> Result<Vec<f64>> {
    match boundary {
        PteBoundary::Consecutive => {
            if d.len() < 2 {
                return Err(DteError::GridTooSmall(d.len()));
            }
            Ok(d.windows(2).map(|p| p[1] - p[0]).collect())
        }
        PteBoundary::OpenLower => {
            if d.is_empty() {
                return Err(DteError::GridTooSmall(0));
            }
            let mut out = Vec::with_capacity(d.len());
            out.push(d[0]);
            out.extend(d.windows(2).map(|p| p[1] - p[0]));
            Ok(out)
        }
    }
}

/// Pooled lower empirical quantiles (inverse of the empirical CDF):
/// the smallest observed `y` with `F_n(y) >= q`.
pub fn quantile_grid(outcomes: &[f64], probs: &[f64]) -> Result<LocationGrid> {
    if probs.is_empty() || probs.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(DteError::InvalidProbabilities);
    }
    if probs.windows(2).any(|p| p[0] >= p[1]) {
        return Err(DteError::InvalidProbabilities);
    }
    if outcomes.is_empty() {
        return Err(DteError::TooFewUnits { needed: 1, got: 0 });
    }
    if let Some(row) = outcomes.iter().position(|v| !v.is_finite()) {
        return Err(DteError::NonFiniteValue {
            field: "outcome",
            row,
        });
    }
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut locations: Vec<f64> = Vec::with_capacity(probs.len());
    for &q in probs {
        // Guard against q * n landing a hair above an integer.
        let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let value = sorted[rank.min(n) - 1];
        if locations.last() == Some(&value) {
            return Err(DteError::DuplicateLocation { value });
        }
        locations.push(value);
    }
    LocationGrid::new(locations)
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_quantile_probs() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}
