//! Domain types shared by every stage of the pipeline.
//!
//! Arms are labelled `1..=K` at every public boundary. Internally arm `w`
//! lives at row `w - 1` of the per-arm matrices.

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};

/// Covariates, assigned arms and observed outcomes for `n` units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    covariates: Array2<f64>,
    arms: Vec<usize>,
    outcomes: Vec<f64>,
    n_arms: usize,
}

impl ExperimentData {
    /// Checks shapes and arm-label range. Finiteness and arm coverage are
    /// checked by [`validate_experiment`].
    pub fn new(
        covariates: Array2<f64>,
        arms: Vec<usize>,
        outcomes: Vec<f64>,
        n_arms: usize,
    ) -> Result<Self> {
        let n = outcomes.len();
        if covariates.nrows() != n || arms.len() != n {
            return Err(DteError::ShapeMismatch(format!(
                "covariates have {} rows, arms {}, outcomes {}",
                covariates.nrows(),
                arms.len(),
                n
            )));
        }
        if n < 2 {
            return Err(DteError::TooFewUnits { needed: 2, got: n });
        }
        if n_arms == 0 {
            return Err(DteError::ShapeMismatch("zero arms declared".into()));
        }
        if covariates.ncols() == 0 {
            return Err(DteError::ShapeMismatch("no covariate columns".into()));
        }
        for (row, &label) in arms.iter().enumerate() {
            if label == 0 || label > n_arms {
                return Err(DteError::ArmOutOfRange {
                    label,
                    row,
                    n_arms,
                });
            }
        }
        Ok(Self {
            covariates,
            arms,
            outcomes,
            n_arms,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    /// Arm labels in `1..=K`.
    pub fn arms(&self) -> &[usize] {
        &self.arms
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Row indices of units assigned to arm `w`.
    pub fn units_in_arm(&self, w: usize) -> Vec<usize> {
        self.arms
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| (a == w).then_some(i))
            .collect()
    }
}

/// Per-arm unit counts and realised assignment shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub counts: Vec<usize>,
    pub shares: Vec<f64>,
}

impl ArmStats {
    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, w: usize) -> usize {
        self.counts[w - 1]
    }

    pub fn share(&self, w: usize) -> f64 {
        self.shares[w - 1]
    }
}

/// Strictly increasing evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationGrid {
    locations: Vec<f64>,
}

impl LocationGrid {
    pub fn new(locations: Vec<f64>) -> Result<Self> {
        check_grid(&locations)?;
        Ok(Self { locations })
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

fn check_grid(locations: &[f64]) -> Result<()> {
    if locations.is_empty() {
        return Err(DteError::EmptyGrid);
    }
    for (row, v) in locations.iter().enumerate() {
        if !v.is_finite() {
            return Err(DteError::NonFiniteValue {
                field: "grid",
                row,
            });
        }
    }
    for (index, pair) in locations.windows(2).enumerate() {
        // `!(a < b)` also rejects duplicates.
        if pair[0] >= pair[1] {
            return Err(DteError::UnsortedGrid { index: index + 1 });
        }
    }
    Ok(())
}

/// Which estimator produced a CDF or prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Empirical,
    LinearAdjusted,
    NnSingle,
    NnMulti,
    NnMultiMonotone,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Empirical => "empirical",
            Method::LinearAdjusted => "linear",
            Method::NnSingle => "nn-single",
            Method::NnMulti => "nn-multi",
            Method::NnMultiMonotone => "nn-multi-monotone",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "empirical" => Method::Empirical,
            "linear" | "linear-adjusted" => Method::LinearAdjusted,
            "nn-single" => Method::NnSingle,
            "nn-multi" => Method::NnMulti,
            "nn-multi-monotone" => Method::NnMultiMonotone,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-arm distribution-function values over a grid: row `w - 1` holds
/// `F_{Y(w)}(y_j)` for every location.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfEstimate {
    pub values: Array2<f64>,
    pub method: Method,
}

impl CdfEstimate {
    pub fn n_arms(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.values.ncols()
    }

    pub fn arm(&self, w: usize) -> ArrayView1<'_, f64> {
        self.values.row(w - 1)
    }
}

/// Cross-fitted conditional distribution predictions, indexed
/// `[arm - 1, unit, location]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCdfMatrix {
    pub predictions: Array3<f64>,
    /// Fold id in `1..=L` for every unit.
    pub fold_assignment: Vec<usize>,
}

impl ConditionalCdfMatrix {
    /// All-zero predictions; plugging these into the adjusted estimator
    /// reproduces the empirical CDF.
    pub fn zeros(n_arms: usize, n: usize, m: usize) -> Self {
        Self {
            predictions: Array3::zeros((n_arms, n, m)),
            fold_assignment: vec![1; n],
        }
    }

    pub fn constant(n_arms: usize, n: usize, m: usize, value: f64) -> Self {
        Self {
            predictions: Array3::from_elem((n_arms, n, m), value),
            fold_assignment: vec![1; n],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.predictions.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Cdf,
    Dte,
    Pte,
}

/// Point estimates with bootstrap standard errors and pointwise intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectBand {
    pub kind: EffectKind,
    /// `(w, w')`; for a CDF band both entries name the same arm.
    pub arm_pair: (usize, usize),
    /// Locations each entry refers to. For PTE this is the upper end of each
    /// interval.
    pub locations: Vec<f64>,
    pub point: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub alpha: f64,
}

impl EffectBand {
    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }
}

/// Checks every invariant of the data and grid and returns the per-arm
/// counts and shares.
pub fn validate_experiment(data: &ExperimentData, grid: &LocationGrid) -> Result<ArmStats> {
    check_grid(grid.locations())?;
    for (row, v) in data.outcomes.iter().enumerate() {
        if !v.is_finite() {
            return Err(DteError::NonFiniteValue {
                field: "outcome",
                row,
            });
        }
    }
    for (row, x) in data.covariates.rows().into_iter().enumerate() {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DteError::NonFiniteValue {
                field: "covariate",
                row,
            });
        }
    }
    let mut counts = vec![0usize; data.n_arms];
    for &w in &data.arms {
        counts[w - 1] += 1;
    }
    if let Some(idx) = counts.iter().position(|&c| c == 0) {
        return Err(DteError::EmptyArm { arm: idx + 1 });
    }
    let n = data.n() as f64;
    let shares = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(ArmStats { counts, shares })
}

/// `labels[(i, j)] = 1` iff `Y_i <= y_j`.
pub fn indicator_labels(data: &ExperimentData, grid: &LocationGrid) -> Array2<f64> {
    indicator_labels_for(data.outcomes(), grid.locations())
}

pub(crate) fn indicator_labels_for(outcomes: &[f64], locations: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((outcomes.len(), locations.len()), |(i, j)| {
        if outcomes[i] <= locations[j] {
            1.0
        } else {
            0.0
        }
    })
}
