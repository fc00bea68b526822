//! Conditional distribution learners: given covariates and the `m x M`
//! matrix of indicators `1{Y <= y_j}`, predict `P(Y <= y_j | X)` for every
//! location at once.
//!
//! Four kinds share one contract: joint linear regression, one small
//! network per location, one multi-output network, and one multi-output
//! network with the cumulative monotone head.

pub mod bench;
pub(crate) mod linear;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};
use crate::model::Method;
use crate::nn::{self, Activation, Head, Increment, LayerSpec, NetworkState, Squash, TrainConfig};
use crate::seed::derive_seed;

pub use bench::{benchmark_training_cost, time_fit, BenchmarkRow};

/// Shared hidden trunk of every network kind. The input width comes from
/// the data and the output width from the grid at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnArchitecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub increment: Increment,
    pub squash: Squash,
}

impl NnArchitecture {
    /// 128-64 ReLU trunk, `exp` increments, arctan squashing.
    pub fn simulation() -> Self {
        Self {
            hidden: vec![128, 64],
            activation: Activation::Relu,
            increment: Increment::Exp,
            squash: Squash::ArctanScaled,
        }
    }

    /// 128-64 ReLU trunk, `exp` increments, `tanh(s/2)` squashing.
    pub fn water() -> Self {
        Self {
            squash: Squash::TanhHalf,
            ..Self::simulation()
        }
    }

    /// 16-16 ReLU trunk, `exp` increments, arctan squashing.
    pub fn abema() -> Self {
        Self {
            hidden: vec![16, 16],
            ..Self::simulation()
        }
    }

    fn layer_spec(&self, d_x: usize, outputs: usize, head: Head) -> Result<LayerSpec> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(d_x);
        widths.extend_from_slice(&self.hidden);
        widths.push(outputs);
        LayerSpec::new(widths, self.activation, head)
    }
}

/// Named parameter sets for the three empirical settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Simulation,
    Water,
    Abema,
}

impl Profile {
    pub fn architecture(self) -> NnArchitecture {
        match self {
            Profile::Simulation => NnArchitecture::simulation(),
            Profile::Water => NnArchitecture::water(),
            Profile::Abema => NnArchitecture::abema(),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let (learning_rate, batch_size) = match self {
            Profile::Simulation => (0.01, 16),
            Profile::Water => (0.001, 64),
            Profile::Abema => (0.001, 128),
        };
        TrainConfig {
            learning_rate,
            batch_size,
            ..TrainConfig::default()
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "simulation" => Some(Profile::Simulation),
            "water" => Some(Profile::Water),
            "abema" => Some(Profile::Abema),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LearnerKind {
    Linear {
        ridge: f64,
        /// Clip predictions into `[0, 1]`. Off by default.
        clip: bool,
    },
    NnSingle {
        architecture: NnArchitecture,
        train: TrainConfig,
    },
    NnMulti {
        architecture: NnArchitecture,
        train: TrainConfig,
    },
    NnMultiMonotone {
        architecture: NnArchitecture,
        train: TrainConfig,
    },
}

impl LearnerKind {
    pub fn linear() -> Self {
        LearnerKind::Linear {
            ridge: 1e-8,
            clip: false,
        }
    }

    /// Builds any kind from its method tag with a profile's settings.
    /// `Method::Empirical` has no learner.
    pub fn from_method(method: Method, profile: Profile) -> Option<Self> {
        let architecture = profile.architecture();
        let train = profile.train_config();
        Some(match method {
            Method::Empirical => return None,
            Method::LinearAdjusted => Self::linear(),
            Method::NnSingle => LearnerKind::NnSingle {
                architecture,
                train,
            },
            Method::NnMulti => LearnerKind::NnMulti {
                architecture,
                train,
            },
            Method::NnMultiMonotone => LearnerKind::NnMultiMonotone {
                architecture,
                train,
            },
        })
    }

    pub fn method(&self) -> Method {
        match self {
            LearnerKind::Linear { .. } => Method::LinearAdjusted,
            LearnerKind::NnSingle { .. } => Method::NnSingle,
            LearnerKind::NnMulti { .. } => Method::NnMulti,
            LearnerKind::NnMultiMonotone { .. } => Method::NnMultiMonotone,
        }
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        match self {
            LearnerKind::Linear { .. } => None,
            LearnerKind::NnSingle { train, .. }
            | LearnerKind::NnMulti { train, .. }
            | LearnerKind::NnMultiMonotone { train, .. } => Some(train),
        }
    }

    pub fn train_config_mut(&mut self) -> Option<&mut TrainConfig> {
        match self {
            LearnerKind::Linear { .. } => None,
            LearnerKind::NnSingle { train, .. }
            | LearnerKind::NnMulti { train, .. }
            | LearnerKind::NnMultiMonotone { train, .. } => Some(train),
        }
    }

    /// The one-target learner whose `M`-fold repetition is the per-location
    /// baseline for this kind.
    pub fn single_target_counterpart(&self) -> Self {
        match self {
            LearnerKind::Linear { .. } | LearnerKind::NnSingle { .. } => self.clone(),
            LearnerKind::NnMulti {
                architecture,
                train,
            }
            | LearnerKind::NnMultiMonotone {
                architecture,
                train,
            } => LearnerKind::NnSingle {
                architecture: architecture.clone(),
                train: train.clone(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LearnerKind::Linear { ridge, .. } => {
                if !(*ridge >= 0.0 && ridge.is_finite()) {
                    return Err(DteError::InvalidConfig("ridge must be >= 0".into()));
                }
                Ok(())
            }
            LearnerKind::NnSingle { train, .. }
            | LearnerKind::NnMulti { train, .. }
            | LearnerKind::NnMultiMonotone { train, .. } => train.validate(),
        }
    }
}

/// Z-scores computed on the training rows. Zero-variance columns keep unit
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let m = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let mut scale = Array1::zeros(x.ncols());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / m;
            let sd = var.sqrt();
            scale[j] = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone)]
enum Params {
    Linear { coefficients: Array2<f64> },
    PerLocation { spec: LayerSpec, nets: Vec<NetworkState> },
    Joint { spec: LayerSpec, net: NetworkState },
}

#[derive(Debug, Clone)]
pub struct FittedLearner {
    kind: LearnerKind,
    standardizer: Standardizer,
    n_outputs: usize,
    params: Params,
    /// Training loss before and after fitting, per network (NN kinds only).
    loss_trace: Vec<(f64, f64)>,
}

impl FittedLearner {
    pub fn kind(&self) -> &LearnerKind {
        &self.kind
    }

    pub fn n_inputs(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// `(initial, final)` training loss for every trained network.
    pub fn loss_trace(&self) -> &[(f64, f64)] {
        &self.loss_trace
    }

    /// Intercept-first coefficient matrix on the standardised scale (linear
    /// kind only).
    pub fn coefficients(&self) -> Option<&Array2<f64>> {
        match &self.params {
            Params::Linear { coefficients } => Some(coefficients),
            _ => None,
        }
    }

    pub fn layer_specs(&self) -> Vec<&LayerSpec> {
        match &self.params {
            Params::Linear { .. } => vec![],
            Params::PerLocation { spec, nets } => vec![spec; nets.len()],
            Params::Joint { spec, .. } => vec![spec],
        }
    }

    /// `q x M` predictions. Network outputs lie in `(0, 1)`; linear outputs
    /// are unclipped unless the kind asks for clipping.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_inputs() {
            return Err(DteError::ShapeMismatch(format!(
                "predict got {} columns, fitted on {}",
                x.ncols(),
                self.n_inputs()
            )));
        }
        if x.nrows() == 0 {
            return Ok(Array2::zeros((0, self.n_outputs)));
        }
        let z = self.standardizer.transform(x);
        match &self.params {
            Params::Linear { coefficients } => {
                let design = linear::with_intercept(z.view());
                let mut out = design.dot(coefficients);
                if let LearnerKind::Linear { clip: true, .. } = self.kind {
                    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
                }
                Ok(out)
            }
            Params::PerLocation { spec, nets } => {
                let mut out = Array2::zeros((x.nrows(), nets.len()));
                for (j, net) in nets.iter().enumerate() {
                    let col = net.forward(spec, z.view())?;
                    out.column_mut(j).assign(&col.column(0));
                }
                Ok(out)
            }
            Params::Joint { spec, net } => net.forward(spec, z.view()),
        }
    }
}

/// Fits one learner on `m` training rows and their `m x M` indicator
/// labels. `seed` drives every random choice of the network kinds.
pub fn fit(
    kind: &LearnerKind,
    x: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<FittedLearner> {
    kind.validate()?;
    let m = x.nrows();
    if m < 2 {
        return Err(DteError::TooFewUnits { needed: 2, got: m });
    }
    if labels.nrows() != m {
        return Err(DteError::ShapeMismatch(format!(
            "{} covariate rows but {} label rows",
            m,
            labels.nrows()
        )));
    }
    let n_outputs = labels.ncols();
    if n_outputs == 0 {
        return Err(DteError::ShapeMismatch("no label columns".into()));
    }
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let d_x = x.ncols();
    let mut loss_trace = Vec::new();
    let params = match kind {
        LearnerKind::Linear { ridge, .. } => {
            let design = linear::with_intercept(z.view());
            Params::Linear {
                coefficients: linear::solve_normal_equations(design.view(), labels, *ridge)?,
            }
        }
        LearnerKind::NnSingle {
            architecture,
            train,
        } => {
            let spec = architecture.layer_spec(d_x, 1, Head::Sigmoid)?;
            let mut nets = Vec::with_capacity(n_outputs);
            for j in 0..n_outputs {
                let target = labels.slice(ndarray::s![.., j..j + 1]);
                let cfg = train.with_seed(derive_seed(seed, &[j as u64]));
                let trained = nn::train(z.view(), target, &spec, &cfg)?;
                loss_trace.push((trained.initial_loss, trained.final_loss()));
                nets.push(trained.state);
            }
            Params::PerLocation { spec, nets }
        }
        LearnerKind::NnMulti {
            architecture,
            train,
        }
        | LearnerKind::NnMultiMonotone {
            architecture,
            train,
        } => {
            let head = match kind {
                LearnerKind::NnMultiMonotone { .. } => Head::Monotone {
                    g: architecture.increment,
                    f: architecture.squash,
                },
                _ => Head::Sigmoid,
            };
            let spec = architecture.layer_spec(d_x, n_outputs, head)?;
            let trained = nn::train(z.view(), labels, &spec, &train.with_seed(seed))?;
            loss_trace.push((trained.initial_loss, trained.final_loss()));
            Params::Joint {
                spec,
                net: trained.state,
            }
        }
    };
    Ok(FittedLearner {
        kind: kind.clone(),
        standardizer,
        n_outputs,
        params,
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_x(m: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, d), |_| rng.random::<f64>())
    }

    fn small_arch() -> NnArchitecture {
        NnArchitecture {
            hidden: vec![8],
            ..NnArchitecture::simulation()
        }
    }

    fn small_train() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn linear_on_constant_labels() {
        let x = random_x(40, 3, 1);
        let c = [0.25, 0.6, 1.0];
        let labels = Array2::from_shape_fn((40, 3), |(_, j)| c[j]);
        let kind = LearnerKind::Linear {
            ridge: 0.0,
            clip: false,
        };
        let fitted = fit(&kind, x.view(), labels.view(), 0).unwrap();
        let b = fitted.coefficients().unwrap();
        for j in 0..3 {
            assert!((b[[0, j]] - c[j]).abs() < 1e-10);
            for k in 1..4 {
                assert!(b[[k, j]].abs() < 1e-10);
            }
        }
        let pred = fitted.predict(random_x(7, 3, 2).view()).unwrap();
        for ((_, j), v) in pred.indexed_iter() {
            assert!((v - c[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_column_needs_ridge() {
        let mut x = random_x(30, 3, 4);
        let first = x.column(0).to_owned();
        x.column_mut(1).assign(&first);
        let labels = random_x(30, 2, 5);
        let exact = LearnerKind::Linear {
            ridge: 0.0,
            clip: false,
        };
        assert!(matches!(
            fit(&exact, x.view(), labels.view(), 0),
            Err(DteError::SingularDesign { .. })
        ));
        let ridged = LearnerKind::Linear {
            ridge: 1e-8,
            clip: false,
        };
        assert!(fit(&ridged, x.view(), labels.view(), 0).is_ok());
    }

    #[test]
    fn linear_reproduces_exact_linear_targets() {
        let x = random_x(50, 4, 9);
        let labels = Array2::from_shape_fn((50, 2), |(i, j)| {
            0.3 + x[[i, 0]] * (j as f64 + 1.0) - 0.5 * x[[i, 3]]
        });
        let kind = LearnerKind::Linear {
            ridge: 0.0,
            clip: false,
        };
        let fitted = fit(&kind, x.view(), labels.view(), 0).unwrap();
        let pred = fitted.predict(x.view()).unwrap();
        let worst = (&pred - &labels).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst <= 1e-8, "residual {worst}");
    }

    #[test]
    fn linear_clip_flag() {
        let x = random_x(20, 1, 3);
        let labels = Array2::from_shape_fn((20, 1), |(i, _)| 2.0 * x[[i, 0]]);
        let clipped = LearnerKind::Linear {
            ridge: 1e-8,
            clip: true,
        };
        let fitted = fit(&clipped, x.view(), labels.view(), 0).unwrap();
        let pred = fitted.predict(x.view()).unwrap();
        assert!(pred.iter().all(|v| (0.0..=1.0).contains(v)));
        let raw = fit(&LearnerKind::linear(), x.view(), labels.view(), 0).unwrap();
        assert!(raw.predict(x.view()).unwrap().iter().any(|&v| v > 1.0));
    }

    #[test]
    fn monotone_learner_rows_are_ordered() {
        let x = random_x(60, 3, 11);
        let labels = Array2::from_shape_fn((60, 5), |(i, j)| {
            if x[[i, 0]] * 5.0 <= j as f64 + 0.5 {
                1.0
            } else {
                0.0
            }
        });
        let kind = LearnerKind::NnMultiMonotone {
            architecture: small_arch(),
            train: small_train(),
        };
        let fitted = fit(&kind, x.view(), labels.view(), 3).unwrap();
        let pred = fitted.predict(random_x(200, 3, 12).view()).unwrap();
        for row in pred.rows() {
            for j in 1..row.len() {
                assert!(row[j] >= row[j - 1]);
            }
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn single_and_multi_share_trunk_at_one_output() {
        let x = random_x(20, 3, 1);
        let labels = Array2::from_shape_fn((20, 1), |(i, _)| (i % 2) as f64);
        let single = fit(
            &LearnerKind::NnSingle {
                architecture: small_arch(),
                train: small_train(),
            },
            x.view(),
            labels.view(),
            0,
        )
        .unwrap();
        let multi = fit(
            &LearnerKind::NnMulti {
                architecture: small_arch(),
                train: small_train(),
            },
            x.view(),
            labels.view(),
            0,
        )
        .unwrap();
        assert_eq!(single.layer_specs(), multi.layer_specs());
    }

    #[test]
    fn fits_are_deterministic_and_shape_checked() {
        let x = random_x(30, 2, 5);
        let labels = Array2::from_shape_fn((30, 3), |(i, j)| ((i + j) % 2) as f64);
        for kind in [
            LearnerKind::linear(),
            LearnerKind::NnSingle {
                architecture: small_arch(),
                train: small_train(),
            },
            LearnerKind::NnMulti {
                architecture: small_arch(),
                train: small_train(),
            },
        ] {
            let a = fit(&kind, x.view(), labels.view(), 8).unwrap();
            let b = fit(&kind, x.view(), labels.view(), 8).unwrap();
            assert_eq!(a.predict(x.view()).unwrap(), b.predict(x.view()).unwrap());
            assert!(matches!(
                a.predict(random_x(2, 5, 0).view()),
                Err(DteError::ShapeMismatch(_))
            ));
        }
        assert!(matches!(
            fit(&LearnerKind::linear(), x.slice(ndarray::s![..1, ..]), labels.slice(ndarray::s![..1, ..]), 0),
            Err(DteError::TooFewUnits { .. })
        ));
    }
}
