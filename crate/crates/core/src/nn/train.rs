use ndarray::{ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{bce_loss, Gradients, NetworkState};
use super::LayerSpec;
use crate::error::{DteError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Predictions are clamped to `[clip, 1 - clip]` inside the loss only.
    pub prediction_clamp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            prediction_clamp: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DteError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(DteError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(DteError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.prediction_clamp > 0.0 && self.prediction_clamp < 0.5) {
            return Err(DteError::InvalidConfig(
                "prediction_clamp must lie in (0, 0.5)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(DteError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut NetworkState, grads: &Gradients, config: &TrainConfig) -> Result<()> {
    let next_step = state.step + 1;
    if !grads.all_finite() {
        return Err(DteError::NonFiniteGradient { step: next_step });
    }
    if grads.layers.len() != state.layers.len() {
        return Err(DteError::ShapeMismatch("gradient layer count".into()));
    }
    state.step = next_step;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(next_step as i32);
    let c2 = 1.0 - b2.powi(next_step as i32);
    let lr = config.learning_rate;
    let eps = config.adam_epsilon;
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (k, grad) in grads.layers.iter().enumerate() {
        let layer = &mut state.layers[k];
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        if grad.weights.dim() != layer.weights.dim() || grad.bias.dim() != layer.bias.dim() {
            return Err(DteError::ShapeMismatch(format!("gradient layer {k}")));
        }
        Zip::from(&mut layer.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .and(&grad.weights)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&grad.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub state: NetworkState,
    /// Full-sample loss before the first update.
    pub initial_loss: f64,
    /// Sample-weighted mean minibatch loss for every epoch.
    pub epoch_losses: Vec<f64>,
}

impl Trained {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// Mini-batch Adam on binary cross-entropy. Initialisation and the shuffle
/// sequence both come from `config.seed`.
pub fn train(
    x: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    spec: &LayerSpec,
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    spec.validate()?;
    let m = x.nrows();
    if m == 0 {
        return Err(DteError::TooFewUnits { needed: 1, got: 0 });
    }
    if labels.dim() != (m, spec.output_width()) {
        return Err(DteError::ShapeMismatch(format!(
            "labels {:?}, expected ({m}, {})",
            labels.dim(),
            spec.output_width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = NetworkState::init(spec, &mut rng);
    let initial = state.forward(spec, x)?;
    let initial_loss = bce_loss(initial.view(), labels, config.prediction_clamp)?;

    let mut order: Vec<usize> = (0..m).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let tb = labels.select(Axis(0), batch);
            let (loss, grads) =
                state.backward(spec, xb.view(), tb.view(), config.prediction_clamp)?;
            adam_step(&mut state, &grads, config)?;
            total += loss * batch.len() as f64;
        }
        epoch_losses.push(total / m as f64);
    }
    Ok(Trained {
        state,
        initial_loss,
        epoch_losses,
    })
}
