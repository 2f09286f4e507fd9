use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::flat;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-sample normalization over the feature axis with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
    pub eps: f64,
}

pub(crate) struct LayerNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.bias.len() != self.gain.len() {
            return Err(Error::Dimension("layer norm gain/bias length differ".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Validation("layer norm eps must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let n = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / n;
        let mut x_hat = x - &mean.view().insert_axis(Axis(1));
        let var = x_hat.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        x_hat *= &inv_std.view().insert_axis(Axis(1));
        let out = &x_hat * &self.gain + &self.bias;
        (out, LayerNormCache { x_hat, inv_std })
    }

    pub(crate) fn backward(
        &self,
        cache: &LayerNormCache,
        grad: Array2<f64>,
        grads: &mut Vec<Vec<f64>>,
    ) -> Array2<f64> {
        let n = grad.ncols() as f64;
        let dgain = (&grad * &cache.x_hat).sum_axis(Axis(0));
        let dbias = grad.sum_axis(Axis(0));
        let dxhat = &grad * &self.gain;
        let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_dx = (&dxhat * &cache.x_hat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut dx = dxhat * n - &sum_d - &cache.x_hat * &sum_dx;
        dx *= &(cache.inv_std.clone() / n).insert_axis(Axis(1));
        grads.push(flat(dgain));
        grads.push(flat(dbias));
        dx
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        vec![
            self.gain.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.gain.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Inverted dropout. Identity outside training.
#[derive(Clone, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    /// Returns the scaled keep-mask for a batch; `None` when nothing is dropped.
    pub(crate) fn mask(&self, shape: (usize, usize), rng: &mut impl Rng) -> Option<Array2<f64>> {
        if self.rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        Some(Array2::from_shape_fn(shape, |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}
