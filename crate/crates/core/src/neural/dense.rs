use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flat;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Linear => 3,
            Activation::Softmax => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Linear,
            4 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Linear => {}
            Activation::Softmax => {
                if !z.is_standard_layout() {
                    *z = z.as_standard_layout().into_owned();
                }
                for mut row in z.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("standard layout"));
                }
            }
        }
    }

    /// Turns dL/dA into dL/dZ given the activated output A.
    fn backward(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(out, |g, &a| *g *= 1.0 - a * a),
            Activation::Relu => grad.zip_mut_with(out, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad.zip_mut_with(out, |g, &a| *g *= a * (1.0 - a)),
            Activation::Linear => {}
            Activation::Softmax => {
                for (mut g, a) in grad.rows_mut().into_iter().zip(out.rows()) {
                    let dot: f64 = g.iter().zip(a.iter()).map(|(g, a)| g * a).sum();
                    g.zip_mut_with(&a, |g, &a| *g = a * (*g - dot));
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Fully connected layer: `activation(W·x + b)` with `W` shaped out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

pub(crate) struct DenseCache {
    input: Array2<f64>,
    output: Array2<f64>,
}

impl DenseLayer {
    /// Uniform ±1/√fan_in initialization, zero bias.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        DenseLayer {
            weights: Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn from_parts(
        weights: Array2<f64>,
        bias: Array1<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = DenseLayer {
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.bias.len() != self.outputs() {
            return Err(Error::Dimension(format!(
                "dense bias has {} entries for {} outputs",
                self.bias.len(),
                self.outputs()
            )));
        }
        if !self.weights.is_standard_layout() || !self.bias.is_standard_layout() {
            return Err(Error::Dimension("dense parameters must be contiguous".into()));
        }
        Ok(())
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if x.len() != self.inputs() {
            return Err(Error::Dimension(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(flat(self.forward_batch(&x)))
    }

    pub(crate) fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t()) + &self.bias;
        self.activation.apply(&mut z);
        z
    }

    pub(crate) fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, DenseCache) {
        let out = self.forward_batch(x);
        let cache = DenseCache {
            input: x.clone(),
            output: out.clone(),
        };
        (out, cache)
    }

    /// Returns dL/dX and pushes [dW, db]. With `pre_activation` the incoming
    /// gradient is already taken with respect to W·x + b.
    pub(crate) fn backward(
        &self,
        cache: &DenseCache,
        mut grad: Array2<f64>,
        pre_activation: bool,
        grads: &mut Vec<Vec<f64>>,
    ) -> Array2<f64> {
        if !pre_activation {
            self.activation.backward(&cache.output, &mut grad);
        }
        let dw = grad.t().dot(&cache.input);
        let db = grad.sum_axis(Axis(0));
        grads.push(flat(dw));
        grads.push(flat(db));
        grad.dot(&self.weights)
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}
