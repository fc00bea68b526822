//! Monte-Carlo harness for the interaction data-generating process.
//!
//! Units draw `X ~ U(0,1)^{d_x}`, a Bernoulli(`rho`) treatment and
//! `U ~ N(0, sd^2)`. The outcome is
//!
//! ```text
//! Y = (sum_j beta_j X_j)^2 + U,   beta_j = 1 for j <= d_x - 2,   beta_j = W otherwise
//! ```
//!
//! which is the double sum `sum_j sum_k beta_j beta_k X_j X_k` written as a
//! square. Control units are arm 1 and treated units arm 2.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};
use crate::estimation::{dte, empirical_cdf, estimate_adjusted, make_folds, quantile_grid};
use crate::learners::{LearnerKind, Profile};
use crate::model::{
    indicator_labels, ConditionalCdfMatrix, ExperimentData, LocationGrid, Method,
};
use crate::seed::derive_seed;

const DATA_STREAM: u64 = 1;
const FOLD_STREAM: u64 = 2;
const FIT_STREAM: u64 = 3;
const ORACLE_STREAM: u64 = 4;

/// Control arm label.
pub const CONTROL: usize = 1;
/// Treated arm label.
pub const TREATED: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub d_x: usize,
    pub treatment_probability: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d_x: 20,
            treatment_probability: 0.5,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(DteError::TooFewUnits {
                needed: 2,
                got: self.n,
            });
        }
        if self.d_x < 3 {
            return Err(DteError::InvalidConfig("d_x must be at least 3".into()));
        }
        if !(self.treatment_probability > 0.0 && self.treatment_probability < 1.0) {
            return Err(DteError::InvalidConfig(
                "treatment probability must lie in (0, 1)".into(),
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(DteError::InvalidConfig("noise sd must be >= 0".into()));
        }
        Ok(())
    }

    fn with_seed_and_n(&self, seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            ..self.clone()
        }
    }
}

/// Outcome for one unit given its covariates and treatment indicator.
pub fn outcome_mean(x: &[f64], treated: bool) -> f64 {
    let d = x.len();
    let base: f64 = x[..d - 2].iter().sum();
    let extra = if treated { x[d - 2] + x[d - 1] } else { 0.0 };
    (base + extra).powi(2)
}

/// One seeded draw of `n` units.
pub fn generate(config: &DgpConfig) -> Result<ExperimentData> {
    config.validate()?;
    let (n, d) = (config.n, config.d_x);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = Array2::zeros((n, d));
    let mut arms = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = rng.random::<f64>();
            x[[i, j]] = *slot;
        }
        let treated = rng.random::<f64>() < config.treatment_probability;
        let noise: f64 = rng.sample(StandardNormal);
        arms.push(if treated { TREATED } else { CONTROL });
        outcomes.push(outcome_mean(&row, treated) + config.noise_sd * noise);
    }
    ExperimentData::new(x, arms, outcomes, 2)
}

/// Ground truth from a large independent draw: the grid is the draw's pooled
/// quantiles and the DTE its empirical treated-minus-control contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDte {
    pub seed: u64,
    pub n_oracle: usize,
    pub probs: Vec<f64>,
    pub grid: LocationGrid,
    pub dte: Vec<f64>,
}

pub fn oracle_dte(config: &DgpConfig, probs: &[f64], n_oracle: usize) -> Result<OracleDte> {
    let draw = config.with_seed_and_n(derive_seed(config.seed, &[ORACLE_STREAM]), n_oracle);
    let data = generate(&draw)?;
    let grid = quantile_grid(data.outcomes(), probs)?;
    let theta = empirical_cdf(&data, &grid)?;
    Ok(OracleDte {
        seed: config.seed,
        n_oracle,
        probs: probs.to_vec(),
        grid,
        dte: dte(&theta, TREATED, CONTROL)?,
    })
}

/// Like [`oracle_dte`] but reuses `oracle_<seed>_<n>.json` under
/// `cache_dir` when it matches the request.
pub fn oracle_dte_cached(
    config: &DgpConfig,
    probs: &[f64],
    n_oracle: usize,
    cache_dir: &Path,
) -> Result<OracleDte> {
    let path = cache_dir.join(format!("oracle_{}_{}.json", config.seed, n_oracle));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(cached) = serde_json::from_str::<OracleDte>(&text) {
            if cached.probs == probs && cached.seed == config.seed && cached.n_oracle == n_oracle {
                return Ok(cached);
            }
        }
    }
    let fresh = oracle_dte(config, probs, n_oracle)?;
    std::fs::create_dir_all(cache_dir)?;
    std::fs::write(&path, serde_json::to_string_pretty(&fresh)?)?;
    Ok(fresh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dgp: DgpConfig,
    /// Methods to compare. The empirical baseline is always computed.
    pub methods: Vec<Method>,
    pub replications: usize,
    pub folds: usize,
    pub probs: Vec<f64>,
    pub n_oracle: usize,
    pub profile: Profile,
    /// Overrides the profile's epoch count for every network.
    pub epochs: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            methods: vec![
                Method::Empirical,
                Method::LinearAdjusted,
                Method::NnMulti,
                Method::NnMultiMonotone,
            ],
            replications: 500,
            folds: 2,
            probs: crate::estimation::default_quantile_probs(),
            n_oracle: 100_000,
            profile: Profile::Simulation,
            epochs: None,
        }
    }
}

impl StudyConfig {
    pub fn learner(&self, method: Method) -> Option<LearnerKind> {
        let mut kind = LearnerKind::from_method(method, self.profile)?;
        if let (Some(epochs), Some(train)) = (self.epochs, kind.train_config_mut()) {
            train.epochs = epochs;
        }
        Some(kind)
    }

    /// Methods in report order with the empirical baseline first.
    pub fn report_methods(&self) -> Vec<Method> {
        let mut out = vec![Method::Empirical];
        for &m in &self.methods {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    }

    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.dgp.seed, &[DATA_STREAM, rep as u64])
    }
}

/// Per-method estimation errors `DTE_hat - DTE_oracle` for every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub method: Method,
    /// `S x M`.
    pub errors: Array2<f64>,
    /// Wall time of the fitting phase, summed over replications.
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub bias: Vec<f64>,
    /// Monte-Carlo standard error of the mean bias.
    pub bias_se: Vec<f64>,
    pub mse: Vec<f64>,
    /// `100 (1 - MSE / MSE_empirical)`.
    pub reduction_pct: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: StudyConfig,
    pub oracle: OracleDte,
    pub replications: usize,
    pub methods: Vec<MethodErrors>,
}

impl SimulationReport {
    pub fn locations(&self) -> &[f64] {
        self.oracle.grid.locations()
    }

    pub fn errors(&self, method: Method) -> Option<&MethodErrors> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// The same report restricted to the first `s` replications.
    pub fn truncated(&self, s: usize) -> Self {
        let s = s.min(self.replications);
        let scale = s as f64 / self.replications.max(1) as f64;
        Self {
            config: StudyConfig {
                replications: s,
                ..self.config.clone()
            },
            oracle: self.oracle.clone(),
            replications: s,
            methods: self
                .methods
                .iter()
                .map(|m| MethodErrors {
                    method: m.method,
                    errors: m.errors.slice(ndarray::s![..s, ..]).to_owned(),
                    fit_seconds: m.fit_seconds * scale,
                })
                .collect(),
        }
    }

    /// Appends methods from another report over the same replications.
    pub fn merge(&mut self, other: &SimulationReport) -> Result<()> {
        if other.oracle != self.oracle || other.config.dgp != self.config.dgp {
            return Err(DteError::InvalidConfig(
                "reports come from different studies".into(),
            ));
        }
        let s = self.replications.min(other.replications);
        *self = self.truncated(s);
        for m in &other.truncated(s).methods {
            if self.errors(m.method).is_none() {
                self.methods.push(m.clone());
                self.config.methods.push(m.method);
            }
        }
        Ok(())
    }

    pub fn summarize(&self) -> Vec<MethodSummary> {
        let baseline = self
            .errors(Method::Empirical)
            .map(|m| column_mse(&m.errors));
        self.methods
            .iter()
            .map(|m| {
                let s = m.errors.nrows() as f64;
                let bias = m.errors.mean_axis(Axis(0)).expect("replications").to_vec();
                let bias_se = m
                    .errors
                    .axis_iter(Axis(1))
                    .zip(&bias)
                    .map(|(col, mean)| {
                        let var =
                            col.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (s - 1.0).max(1.0);
                        (var / s).sqrt()
                    })
                    .collect();
                let mse = column_mse(&m.errors);
                let reduction_pct = match &baseline {
                    Some(base) => mse
                        .iter()
                        .zip(base)
                        .map(|(v, b)| 100.0 * (1.0 - v / b))
                        .collect(),
                    None => vec![f64::NAN; mse.len()],
                };
                MethodSummary {
                    method: m.method,
                    bias,
                    bias_se,
                    mse,
                    reduction_pct,
                }
            })
            .collect()
    }
}

fn column_mse(errors: &Array2<f64>) -> Vec<f64> {
    let s = errors.nrows() as f64;
    errors
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|e| e * e).sum::<f64>() / s)
        .collect()
}

struct Replication {
    errors: Vec<Vec<f64>>,
    seconds: Vec<f64>,
}

fn run_replication(
    config: &StudyConfig,
    methods: &[Method],
    oracle: &OracleDte,
    rep: usize,
) -> Result<Replication> {
    let dgp = config
        .dgp
        .with_seed_and_n(config.replication_seed(rep), config.dgp.n);
    let data = generate(&dgp)?;
    let grid = &oracle.grid;
    let plan = make_folds(
        data.n(),
        config.folds,
        derive_seed(config.dgp.seed, &[FOLD_STREAM, rep as u64]),
    )?;
    let mut errors = Vec::with_capacity(methods.len());
    let mut seconds = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let theta = match config.learner(method) {
            None => empirical_cdf(&data, grid)?,
            Some(kind) => {
                let plan = crate::estimation::CrossFitPlan {
                    seed: derive_seed(
                        config.dgp.seed,
                        &[FIT_STREAM, rep as u64, method as u64],
                    ),
                    ..plan.clone()
                };
                estimate_adjusted(&data, grid, &kind, &plan)?.theta
            }
        };
        seconds.push(start.elapsed().as_secs_f64());
        let d = dte(&theta, TREATED, CONTROL)?;
        errors.push(d.iter().zip(&oracle.dte).map(|(a, b)| a - b).collect());
    }
    Ok(Replication { errors, seconds })
}

/// Runs the full protocol: one oracle, then `S` paired replications in
/// which every method sees the same data and folds.
pub fn run_study(config: &StudyConfig) -> Result<SimulationReport> {
    let oracle = oracle_dte(&config.dgp, &config.probs, config.n_oracle)?;
    run_study_with_oracle(config, oracle)
}

pub fn run_study_with_oracle(config: &StudyConfig, oracle: OracleDte) -> Result<SimulationReport> {
    if config.replications < 2 {
        return Err(DteError::InvalidConfig("a study needs at least 2 replications".into()));
    }
    config.dgp.validate()?;
    let methods = config.report_methods();
    let reps: Vec<Result<Replication>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, &methods, &oracle, rep))
        .collect();
    let m = oracle.dte.len();
    let mut per_method: Vec<MethodErrors> = methods
        .iter()
        .map(|&method| MethodErrors {
            method,
            errors: Array2::zeros((config.replications, m)),
            fit_seconds: 0.0,
        })
        .collect();
    // Fixed replication order keeps the aggregate independent of scheduling.
    for (s, rep) in reps.into_iter().enumerate() {
        let rep = rep?;
        for (k, entry) in per_method.iter_mut().enumerate() {
            entry
                .errors
                .row_mut(s)
                .assign(&ndarray::Array1::from(rep.errors[k].clone()));
            entry.fit_seconds += rep.seconds[k];
        }
    }
    Ok(SimulationReport {
        config: StudyConfig {
            methods: methods.clone(),
            ..config.clone()
        },
        oracle,
        replications: config.replications,
        methods: per_method,
    })
}

/// Pooled classification quality of own-arm predictions at threshold 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Zero when nothing is predicted positive.
    pub precision: f64,
    /// Zero when no label is positive.
    pub recall: f64,
}

/// Each unit is scored with its own arm's predictions against its labels
/// `1{Y_i <= y_j}`; a prediction counts as positive when `>= 0.5`.
pub fn classification_metrics(
    gamma: &ConditionalCdfMatrix,
    data: &ExperimentData,
    grid: &LocationGrid,
) -> Result<ClassificationMetrics> {
    let (k, n, m) = gamma.shape();
    if k != data.n_arms() || n != data.n() || m != grid.len() {
        return Err(DteError::ShapeMismatch("gamma does not match data and grid".into()));
    }
    let labels = indicator_labels(data, grid);
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..n {
        let w = data.arms()[i];
        for j in 0..m {
            let predicted = gamma.predictions[[w - 1, i, j]] >= 0.5;
            let actual = labels[[i, j]] == 1.0;
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ClassificationMetrics {
        accuracy: ratio(tp + tn, n * m),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}
