//! Multiplier-bootstrap standard errors and pointwise bands.
//!
//! Each unit contributes the moment function
//!
//! ```text
//! psi_w(Z_i, y) = 1{W_i = w} (1{Y_i <= y} - g_w(X_i, y)) / pi_w + g_w(X_i, y) - theta_w(y)
//! ```
//!
//! and a bootstrap draw perturbs the estimate by `1/n sum_i xi_i psi(Z_i)`
//! with multipliers `xi = m1 / sqrt(2) + (m2^2 - 1) / 2`, `m1, m2 ~ N(0, 1)`.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{DteError, Result};
use crate::estimation::{pte_from_dte, AdjustedEstimate, PteBoundary};
use crate::model::{
    indicator_labels, validate_experiment, ArmStats, CdfEstimate, ConditionalCdfMatrix,
    EffectBand, EffectKind, ExperimentData, LocationGrid,
};
use crate::seed::derive_seed;

/// Draws per parallel work unit. Each draw owns its generator stream, so the
/// chunking never changes the numbers.
const DRAW_CHUNK: usize = 128;

/// `psi[(i, w - 1, j)]` for every unit, arm and location.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub psi: Array3<f64>,
}

impl InfluenceMatrix {
    pub fn n(&self) -> usize {
        self.psi.dim().0
    }

    /// Mean over units for every `(arm, location)`.
    pub fn column_means(&self) -> Array2<f64> {
        self.psi.mean_axis(Axis(0)).expect("non-empty")
    }

    /// Multiplies every contribution by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            psi: &self.psi * c,
        }
    }
}

/// Evaluates the moment function at the fitted `(theta, gamma)` and the
/// realised shares `pi_w = n_w / n`.
pub fn influence(
    data: &ExperimentData,
    grid: &LocationGrid,
    theta: &CdfEstimate,
    gamma: &ConditionalCdfMatrix,
    stats: &ArmStats,
) -> Result<InfluenceMatrix> {
    let (k, n, m) = (data.n_arms(), data.n(), grid.len());
    if theta.values.dim() != (k, m) {
        return Err(DteError::ShapeMismatch(format!(
            "theta is {:?}, expected ({k}, {m})",
            theta.values.dim()
        )));
    }
    if gamma.shape() != (k, n, m) {
        return Err(DteError::ShapeMismatch(format!(
            "gamma is {:?}, expected ({k}, {n}, {m})",
            gamma.shape()
        )));
    }
    if stats.counts.len() != k || stats.shares.iter().any(|&p| !(p > 0.0)) {
        return Err(DteError::ShapeMismatch("arm shares must be positive per arm".into()));
    }
    let labels = indicator_labels(data, grid);
    let mut psi = Array3::zeros((n, k, m));
    for i in 0..n {
        let own = data.arms()[i];
        for w in 1..=k {
            let pi = stats.share(w);
            for j in 0..m {
                let g = gamma.predictions[[w - 1, i, j]];
                let direct = if own == w {
                    (labels[[i, j]] - g) / pi
                } else {
                    0.0
                };
                psi[[i, w - 1, j]] = direct + g - theta.values[[w - 1, j]];
            }
        }
    }
    Ok(InfluenceMatrix { psi })
}

/// `xi = m1 / sqrt(2) + (m2^2 - 1) / 2`.
#[inline]
pub fn multiplier_from_normals(m1: f64, m2: f64) -> f64 {
    m1 / std::f64::consts::SQRT_2 + (m2 * m2 - 1.0) / 2.0
}

/// `n` i.i.d. multipliers with mean 0 and variance 1.
pub fn multipliers<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m1: f64 = rng.sample(StandardNormal);
            let m2: f64 = rng.sample(StandardNormal);
            multiplier_from_normals(m1, m2)
        })
        .collect()
}

/// Seeded convenience wrapper around [`multipliers`].
pub fn multipliers_seeded(n: usize, seed: u64) -> Vec<f64> {
    multipliers(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// The functional of the per-arm CDFs being bootstrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Functional {
    Cdf { arm: usize },
    Dte { arm: usize, baseline: usize },
    Pte {
        arm: usize,
        baseline: usize,
        boundary: PteBoundary,
    },
}

impl Functional {
    pub fn kind(&self) -> EffectKind {
        match self {
            Functional::Cdf { .. } => EffectKind::Cdf,
            Functional::Dte { .. } => EffectKind::Dte,
            Functional::Pte { .. } => EffectKind::Pte,
        }
    }

    pub fn arm_pair(&self) -> (usize, usize) {
        match *self {
            Functional::Cdf { arm } => (arm, arm),
            Functional::Dte { arm, baseline } | Functional::Pte { arm, baseline, .. } => {
                (arm, baseline)
            }
        }
    }

    fn validate(&self, n_arms: usize) -> Result<()> {
        let (a, b) = self.arm_pair();
        for w in [a, b] {
            if w == 0 || w > n_arms {
                return Err(DteError::ArmOutOfRange {
                    label: w,
                    row: 0,
                    n_arms,
                });
            }
        }
        if !matches!(self, Functional::Cdf { .. }) && a == b {
            return Err(DteError::SameArm(a));
        }
        Ok(())
    }

    /// Applies the functional to a `K x M` matrix of CDF values.
    pub fn apply(&self, theta: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match *self {
            Functional::Cdf { arm } => Ok(theta.row(arm - 1).to_vec()),
            Functional::Dte { arm, baseline } => Ok(difference(theta, arm, baseline)),
            Functional::Pte {
                arm,
                baseline,
                boundary,
            } => pte_from_dte(&difference(theta, arm, baseline), boundary),
        }
    }

    /// Locations each output entry refers to.
    pub fn locations(&self, grid: &LocationGrid) -> Vec<f64> {
        match self {
            Functional::Pte {
                boundary: PteBoundary::Consecutive,
                ..
            } => grid.locations()[1..].to_vec(),
            _ => grid.locations().to_vec(),
        }
    }
}

fn difference(theta: ArrayView2<'_, f64>, a: usize, b: usize) -> Vec<f64> {
    theta
        .row(a - 1)
        .iter()
        .zip(theta.row(b - 1).iter())
        .map(|(x, y)| x - y)
        .collect()
}

/// Which normal quantile multiplies the standard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalValue {
    /// `z_{1 - alpha/2}`: a conventional two-sided band.
    #[default]
    TwoSided,
    /// `z_{1 - alpha}`.
    OneSided,
}

impl CriticalValue {
    pub fn z(self, alpha: f64) -> f64 {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        match self {
            CriticalValue::TwoSided => normal.inverse_cdf(1.0 - alpha / 2.0),
            CriticalValue::OneSided => normal.inverse_cdf(1.0 - alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub repetitions: usize,
    pub alpha: f64,
    pub seed: u64,
    pub critical_value: CriticalValue,
    /// Fail with `DegenerateDraws` when every draw equals every other;
    /// otherwise such a band collapses onto the point estimate.
    pub reject_degenerate: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            repetitions: 5000,
            alpha: 0.05,
            seed: 0,
            critical_value: CriticalValue::TwoSided,
            reject_degenerate: false,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(DteError::InvalidConfig("bootstrap needs at least 2 draws".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DteError::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// `B` draws of the functional, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub repetitions: usize,
    pub draws: Array2<f64>,
    pub seed: u64,
}

impl BootstrapDraws {
    /// Sample variance per column with the `B - 1` divisor.
    pub fn variance(&self) -> Vec<f64> {
        let b = self.repetitions as f64;
        self.draws
            .axis_iter(Axis(1))
            .map(|col| {
                let mean = col.sum() / b;
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0)
            })
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        let first = self.draws.row(0);
        self.draws.rows().into_iter().all(|r| r == first)
    }
}

/// Draws `phi(theta + 1/n sum_i xi_i psi_i)` for `b = 1..=B`. Draw `b` uses
/// the generator seeded by `(seed, b)`.
pub fn bootstrap_draws(
    theta: &CdfEstimate,
    influence: &InfluenceMatrix,
    functional: &Functional,
    repetitions: usize,
    seed: u64,
) -> Result<BootstrapDraws> {
    let (n, k, m) = influence.psi.dim();
    if theta.values.dim() != (k, m) {
        return Err(DteError::ShapeMismatch("theta and influence disagree".into()));
    }
    functional.validate(k)?;
    let width = functional.apply(theta.values.view())?.len();
    // n x (K M) so one matrix product serves a whole chunk of draws.
    let flat = influence
        .psi
        .view()
        .into_shape_with_order((n, k * m))
        .map_err(|e| DteError::ShapeMismatch(e.to_string()))?;
    let base = theta
        .values
        .view()
        .into_shape_with_order(k * m)
        .map_err(|e| DteError::ShapeMismatch(e.to_string()))?;

    let chunks: Vec<(usize, usize)> = (0..repetitions)
        .step_by(DRAW_CHUNK)
        .map(|start| (start, (start + DRAW_CHUNK).min(repetitions)))
        .collect();
    let blocks: Vec<Result<Array2<f64>>> = chunks
        .into_par_iter()
        .map(|(start, end)| {
            let rows = end - start;
            let mut xi = Array2::zeros((rows, n));
            for (r, b) in (start..end).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b as u64]));
                for (slot, v) in xi.row_mut(r).iter_mut().zip(multipliers(n, &mut rng)) {
                    *slot = v;
                }
            }
            let shift = xi.dot(&flat) / n as f64;
            let mut out = Array2::zeros((rows, width));
            for r in 0..rows {
                let perturbed = (&shift.row(r) + &base)
                    .into_shape_with_order((k, m))
                    .map_err(|e| DteError::ShapeMismatch(e.to_string()))?;
                let phi = functional.apply(perturbed.view())?;
                out.row_mut(r).assign(&ndarray::Array1::from(phi));
            }
            Ok(out)
        })
        .collect();

    let mut draws = Array2::zeros((repetitions, width));
    let mut row = 0;
    for block in blocks {
        let block = block?;
        let rows = block.nrows();
        draws
            .slice_mut(ndarray::s![row..row + rows, ..])
            .assign(&block);
        row += rows;
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(DteError::ShapeMismatch("non-finite bootstrap draw".into()));
    }
    Ok(BootstrapDraws {
        repetitions,
        draws,
        seed,
    })
}

/// Band from already computed influence contributions.
pub fn band_from_influence(
    grid: &LocationGrid,
    theta: &CdfEstimate,
    influence: &InfluenceMatrix,
    functional: &Functional,
    config: &BootstrapConfig,
) -> Result<EffectBand> {
    config.validate()?;
    let point = functional.apply(theta.values.view())?;
    let draws = bootstrap_draws(theta, influence, functional, config.repetitions, config.seed)?;
    if config.reject_degenerate && draws.is_degenerate() {
        return Err(DteError::DegenerateDraws);
    }
    let se: Vec<f64> = draws.variance().into_iter().map(f64::sqrt).collect();
    let z = config.critical_value.z(config.alpha);
    let ci_lo = point.iter().zip(&se).map(|(p, s)| p - z * s).collect();
    let ci_hi = point.iter().zip(&se).map(|(p, s)| p + z * s).collect();
    Ok(EffectBand {
        kind: functional.kind(),
        arm_pair: functional.arm_pair(),
        locations: functional.locations(grid),
        point,
        se,
        ci_lo,
        ci_hi,
        alpha: config.alpha,
    })
}

/// Pointwise multiplier-bootstrap band for a functional of an adjusted or
/// empirical estimate.
pub fn bootstrap_band(
    data: &ExperimentData,
    grid: &LocationGrid,
    estimate: &AdjustedEstimate,
    functional: &Functional,
    config: &BootstrapConfig,
) -> Result<EffectBand> {
    let stats = validate_experiment(data, grid)?;
    let psi = influence(data, grid, &estimate.theta, &estimate.gamma, &stats)?;
    band_from_influence(grid, &estimate.theta, &psi, functional, config)
}

/// `100 (1 - SE_adjusted / SE_empirical)` per location.
pub fn se_reduction(empirical: &EffectBand, adjusted: &EffectBand) -> Result<Vec<f64>> {
    if empirical.kind != adjusted.kind
        || empirical.len() != adjusted.len()
        || empirical.locations != adjusted.locations
    {
        return Err(DteError::ShapeMismatch(
            "bands must share functional and grid".into(),
        ));
    }
    empirical
        .se
        .iter()
        .zip(&adjusted.se)
        .enumerate()
        .map(|(index, (&e, &a))| {
            if e == 0.0 {
                Err(DteError::ZeroBaselineSE { index })
            } else {
                Ok(100.0 * (1.0 - a / e))
            }
        })
        .collect()
}
