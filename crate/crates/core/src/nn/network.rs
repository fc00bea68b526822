use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Head, LayerSpec};
use crate::error::{DteError, Result};

/// One dense layer: `z = a W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Layer::all_finite)
    }

    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            layers: state
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }
}

/// Parameters plus Adam moment accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub layers: Vec<Layer>,
    pub(crate) first_moment: Vec<Layer>,
    pub(crate) second_moment: Vec<Layer>,
    pub step: u64,
}

struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    /// Non-negative increments `g(z)` (monotone head only).
    increments: Option<Array2<f64>>,
    /// Prefix sums of the increments (monotone head only).
    prefix: Option<Array2<f64>>,
    output: Array2<f64>,
}

impl NetworkState {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        let layers: Vec<Layer> = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    /// Wraps explicit parameters with fresh optimiser state.
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        let zeros: Vec<Layer> = layers
            .iter()
            .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            layers,
            step: 0,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Layer::all_finite)
    }

    fn check_shapes(&self, spec: &LayerSpec, x: &ArrayView2<'_, f64>) -> Result<()> {
        if self.layers.len() != spec.n_layers() {
            return Err(DteError::ShapeMismatch(format!(
                "state has {} layers, spec {}",
                self.layers.len(),
                spec.n_layers()
            )));
        }
        for (k, (layer, w)) in self.layers.iter().zip(spec.widths.windows(2)).enumerate() {
            if layer.weights.dim() != (w[0], w[1]) || layer.bias.len() != w[1] {
                return Err(DteError::ShapeMismatch(format!("layer {k} shape")));
            }
        }
        if x.ncols() != spec.input_width() {
            return Err(DteError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                spec.input_width()
            )));
        }
        if x.nrows() == 0 {
            return Err(DteError::ShapeMismatch("empty batch".into()));
        }
        Ok(())
    }

    /// Output probabilities for a batch.
    pub fn forward(&self, spec: &LayerSpec, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_shapes(spec, &x)?;
        Ok(self.forward_cached(spec, x).output)
    }

    fn forward_cached(&self, spec: &LayerSpec, x: ArrayView2<'_, f64>) -> ForwardCache {
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights) + &layer.bias;
            inputs.push(a);
            if k + 1 < n_layers {
                a = z.mapv(|v| spec.hidden_activation.apply(v));
            } else {
                a = Array2::zeros((0, 0));
            }
            pre.push(z);
        }
        let z = pre.last().expect("at least one layer");
        match spec.head {
            Head::Sigmoid => ForwardCache {
                output: z.mapv(sigmoid),
                inputs,
                pre,
                increments: None,
                prefix: None,
            },
            Head::Monotone { g, f } => {
                let increments = z.mapv(|v| g.apply(v));
                let mut prefix = increments.clone();
                for mut row in prefix.rows_mut() {
                    let mut acc = 0.0;
                    for v in row.iter_mut() {
                        acc += *v;
                        *v = acc;
                    }
                }
                let output = prefix.mapv(|s| f.apply(s));
                ForwardCache {
                    output,
                    inputs,
                    pre,
                    increments: Some(increments),
                    prefix: Some(prefix),
                }
            }
        }
    }

    /// Mean binary cross-entropy of the batch and its exact gradient with
    /// respect to every parameter.
    pub fn backward(
        &self,
        spec: &LayerSpec,
        x: ArrayView2<'_, f64>,
        target: ArrayView2<'_, f64>,
        clamp: f64,
    ) -> Result<(f64, Gradients)> {
        self.check_shapes(spec, &x)?;
        if target.dim() != (x.nrows(), spec.output_width()) {
            return Err(DteError::ShapeMismatch(format!(
                "targets {:?}, expected ({}, {})",
                target.dim(),
                x.nrows(),
                spec.output_width()
            )));
        }
        let cache = self.forward_cached(spec, x);
        let loss = bce_loss(cache.output.view(), target, clamp)?;
        let scale = 1.0 / cache.output.len() as f64;
        let (lo, hi) = (clamp, 1.0 - clamp);

        // dL/dz for the last layer.
        let mut delta = match spec.head {
            Head::Sigmoid => {
                let mut d = Array2::zeros(cache.output.raw_dim());
                Zip::from(&mut d)
                    .and(&cache.output)
                    .and(&target)
                    .for_each(|d, &p, &t| {
                        *d = if p < lo || p > hi { 0.0 } else { (p - t) * scale };
                    });
                d
            }
            Head::Monotone { g, f } => {
                let increments = cache.increments.as_ref().expect("monotone cache");
                let prefix = cache.prefix.as_ref().expect("monotone cache");
                let z = cache.pre.last().expect("layer");
                let mut d = Array2::zeros(cache.output.raw_dim());
                let m = cache.output.ncols();
                for r in 0..cache.output.nrows() {
                    // dL/ds_j, then reverse cumulative sum gives dL/du_m.
                    let mut acc = 0.0;
                    for j in (0..m).rev() {
                        let p = cache.output[[r, j]];
                        let t = target[[r, j]];
                        let dl_do = if p < lo || p > hi {
                            0.0
                        } else {
                            (p - t) / (p * (1.0 - p)) * scale
                        };
                        acc += dl_do * f.derivative(prefix[[r, j]], p);
                        d[[r, j]] = acc * g.derivative(z[[r, j]], increments[[r, j]]);
                    }
                }
                d
            }
        };

        let n_layers = self.layers.len();
        let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
        for k in (0..n_layers).rev() {
            let input = &cache.inputs[k];
            let weights = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut upstream = delta.dot(&self.layers[k].weights.t());
                let z_prev = &cache.pre[k - 1];
                Zip::from(&mut upstream)
                    .and(z_prev)
                    .and(input)
                    .for_each(|u, &z, &a| *u *= spec.hidden_activation.derivative(z, a));
                delta = upstream;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

/// Mean over all entries of `-[t ln p + (1 - t) ln(1 - p)]`, with `p`
/// clamped to `[clamp, 1 - clamp]`.
pub fn bce_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, clamp: f64) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(DteError::ShapeMismatch(format!(
            "predictions {:?} vs targets {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(DteError::ShapeMismatch("empty batch".into()));
    }
    let mut total = 0.0;
    Zip::from(&pred).and(&target).for_each(|&p, &t| {
        let p = p.clamp(clamp, 1.0 - clamp);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    });
    Ok(total / pred.len() as f64)
}
