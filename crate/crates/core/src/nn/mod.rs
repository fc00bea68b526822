//! A small dense network engine: forward pass, exact reverse-mode gradients
//! for binary cross-entropy, Adam, and a cumulative monotone output head.
//!
//! The monotone head turns the last layer's pre-activations `z` into
//! probabilities that are non-decreasing along the output axis:
//!
//! ```text
//! u_m = g(z_m) >= 0,   s_j = u_1 + ... + u_j,   o_j = f(s_j)
//! ```
//!
//! with `g` non-negative and `f` increasing from `[0, inf)` into `[0, 1]`.

mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};

pub use network::{bce_loss, Gradients, Layer, NetworkState};
pub use train::{adam_step, train, TrainConfig, Trained};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    #[inline]
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Non-negative increment map applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Increment {
    Exp,
    Softplus,
}

impl Increment {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Increment::Exp => z.exp(),
            Increment::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    #[inline]
    pub(crate) fn derivative(self, z: f64, u: f64) -> f64 {
        match self {
            Increment::Exp => u,
            Increment::Softplus => sigmoid(z),
        }
    }
}

/// Increasing squashing map from `[0, inf)` to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Squash {
    /// `arctan(s) / (pi / 2)`
    ArctanScaled,
    /// `(1 - e^{-s}) / (1 + e^{-s})`, i.e. `tanh(s / 2)`
    TanhHalf,
}

impl Squash {
    #[inline]
    pub(crate) fn apply(self, s: f64) -> f64 {
        match self {
            Squash::ArctanScaled => s.atan() / std::f64::consts::FRAC_PI_2,
            Squash::TanhHalf => (0.5 * s).tanh(),
        }
    }

    #[inline]
    pub(crate) fn derivative(self, s: f64, o: f64) -> f64 {
        match self {
            Squash::ArctanScaled => 1.0 / (std::f64::consts::FRAC_PI_2 * (1.0 + s * s)),
            Squash::TanhHalf => 0.5 * (1.0 - o * o),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Head {
    /// Independent sigmoid per output.
    Sigmoid,
    /// Cumulative head: prefix sums of `g(z)` squashed by `f`.
    Monotone { g: Increment, f: Squash },
}

/// Layer widths `(d_x, h_1, ..., h_H)`, where the last width is the number
/// of outputs, plus the hidden activation and the output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub head: Head,
}

impl LayerSpec {
    pub fn new(widths: Vec<usize>, hidden_activation: Activation, head: Head) -> Result<Self> {
        let spec = Self {
            widths,
            hidden_activation,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(DteError::InvalidConfig(
                "need at least an input and an output width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(DteError::InvalidConfig("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Same trunk with a different output width.
    pub fn with_output_width(&self, m: usize) -> Self {
        let mut widths = self.widths.clone();
        *widths.last_mut().expect("validated") = m;
        Self {
            widths,
            hidden_activation: self.hidden_activation,
            head: self.head,
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
