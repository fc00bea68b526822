use thiserror::Error;

/// Every failure the library can report. Variants are grouped by the module
/// that raises them; the `Display` text carries the module prefix so CLI
/// messages stay attributable.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DteError {
    // core model
    #[error("model: arm {arm} has no units")]
    EmptyArm { arm: usize },
    #[error("model: non-finite value in {field} at row {row}")]
    NonFiniteValue { field: &'static str, row: usize },
    #[error("model: location grid must be strictly increasing (index {index})")]
    UnsortedGrid { index: usize },
    #[error("model: location grid is empty")]
    EmptyGrid,
    #[error("model: arm label {label} at row {row} outside 1..={n_arms}")]
    ArmOutOfRange {
        label: usize,
        row: usize,
        n_arms: usize,
    },
    #[error("model: need at least {needed} units, got {got}")]
    TooFewUnits { needed: usize, got: usize },
    #[error("model: shape mismatch: {0}")]
    ShapeMismatch(String),

    // nn engine
    #[error("nn: non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("nn: invalid configuration: {0}")]
    InvalidConfig(String),

    // learners
    #[error("learners: design matrix is singular (pivot {pivot} at column {column})")]
    SingularDesign { column: usize, pivot: f64 },

    // estimation
    #[error("estimation: arm {arm} has fewer than 2 training units outside fold {fold}")]
    EmptyTrainingArm { arm: usize, fold: usize },
    #[error("estimation: arms must differ (got {0} twice)")]
    SameArm(usize),
    #[error("estimation: need at least 2 locations, got {0}")]
    GridTooSmall(usize),
    #[error("estimation: quantile grid collapses: location {value} repeats")]
    DuplicateLocation { value: f64 },
    #[error("estimation: probabilities must be strictly increasing inside (0,1)")]
    InvalidProbabilities,

    // inference
    #[error("inference: all bootstrap draws are identical")]
    DegenerateDraws,
    #[error("inference: baseline standard error is zero at location index {index}")]
    ZeroBaselineSE { index: usize },

    // cli / io
    #[error("io: missing column {0:?}")]
    MissingColumn(String),
    #[error("io: cannot parse row {row}, column {column:?}: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },
    #[error("io: {0}")]
    Io(String),
    #[error("config: {0}")]
    Config(String),
}

impl From<std::io::Error> for DteError {
    fn from(err: std::io::Error) -> Self {
        DteError::Io(err.to_string())
    }
}

impl From<csv::Error> for DteError {
    fn from(err: csv::Error) -> Self {
        DteError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for DteError {
    fn from(err: serde_json::Error) -> Self {
        DteError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DteError>;
