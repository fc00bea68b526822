//! Distributional and probability treatment effects for randomized
//! experiments, with cross-fitted regression adjustment.
//!
//! The pipeline:
//!
//! 1. [`model`] holds the experiment, the location grid and result types.
//! 2. [`learners`] predict `P(Y <= y | X)` at every grid location, either
//!    one location at a time or jointly (optionally with a monotone head
//!    from [`nn`]).
//! 3. [`estimation`] cross-fits a learner and plugs the held-out
//!    predictions into the adjusted CDF estimator, then forms DTE / PTE.
//! 4. [`inference`] runs the multiplier bootstrap for pointwise bands.
//! 5. [`simulation`] replays the Monte-Carlo protocol against a large-sample
//!    oracle; [`io`] and [`cli`] wrap everything for the command line.

pub mod cli;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod learners;
pub mod model;
pub mod nn;
pub mod seed;
pub mod simulation;

pub use error::{DteError, Result};
pub use estimation::{
    adjusted_cdf, crossfit_gamma, dte, empirical_cdf, estimate_adjusted, make_folds, pte,
    quantile_grid, AdjustedEstimate, CrossFitPlan, PteBoundary,
};
pub use inference::{bootstrap_band, influence, se_reduction, BootstrapConfig, Functional};
pub use learners::{fit, FittedLearner, LearnerKind, NnArchitecture, Profile};
pub use model::{
    indicator_labels, validate_experiment, ArmStats, CdfEstimate, ConditionalCdfMatrix,
    EffectBand, EffectKind, ExperimentData, LocationGrid, Method,
};
