//! A small f64 neural toolkit with hand-written reverse-mode gradients.
//!
//! Models are [`Network`]s: an ordered stack of [`Layer`]s operating on
//! `batch × features` matrices. A [`BiGruLayer`] reads each row as a
//! flattened sequence of `input_size`-dim steps.

mod dense;
mod format;
mod gru;
mod norm;
mod optim;

use std::ops::Range;

use ndarray::{Array, Array2, Dimension};
use rand_chacha::ChaCha8Rng;

pub use dense::{sigmoid, softmax_in_place, Activation, DenseLayer};
pub use format::{decode_network, encode_network};
pub use gru::{BiGruLayer, GruCell};
pub use norm::{Dropout, LayerNorm, LAYER_NORM_EPS};
pub use optim::{optimize_step, AdamState, TrainConfig};

use crate::error::{Error, Result};

/// Elements in logical (row-major) order regardless of memory layout.
pub(crate) fn flat<D: Dimension>(a: Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    LayerNorm(LayerNorm),
    Dropout(Dropout),
    BiGru(BiGruLayer),
}

/// Shape-level description of a layer, used to validate loaded weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    LayerNorm {
        dim: usize,
    },
    Dropout {
        rate: f64,
    },
    BiGru {
        input: usize,
        hidden: usize,
    },
}

enum Cache {
    Dense(dense::DenseCache),
    LayerNorm(norm::LayerNormCache),
    Dropout(Option<Array2<f64>>),
    BiGru(gru::BiGruCache),
}

/// Activations recorded by a forward pass, consumed by [`Network::backward`].
pub struct Tape {
    caches: Vec<Cache>,
    range: Range<usize>,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs(),
                outputs: d.outputs(),
                activation: d.activation,
            },
            Layer::LayerNorm(n) => LayerSpec::LayerNorm { dim: n.dim() },
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
            Layer::BiGru(g) => LayerSpec::BiGru {
                input: g.input_size(),
                hidden: g.hidden_size(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Layer::Dense(d) => d.validate(),
            Layer::LayerNorm(n) => n.validate(),
            Layer::Dropout(d) => Dropout::new(d.rate).map(|_| ()),
            Layer::BiGru(g) => g.validate(),
        }
    }

    /// Output width for a given input width, or a dimension error.
    fn output_width(&self, width: usize) -> Result<usize> {
        let bad = |want: String| {
            Err(Error::Dimension(format!(
                "layer {:?} cannot take {width} features ({want})",
                self.spec()
            )))
        };
        match self {
            Layer::Dense(d) if d.inputs() == width => Ok(d.outputs()),
            Layer::Dense(d) => bad(format!("expects {}", d.inputs())),
            Layer::LayerNorm(n) if n.dim() == width => Ok(width),
            Layer::LayerNorm(n) => bad(format!("expects {}", n.dim())),
            Layer::Dropout(_) => Ok(width),
            Layer::BiGru(g) if width > 0 && width.is_multiple_of(g.input_size()) => {
                Ok(2 * g.hidden_size())
            }
            Layer::BiGru(g) => bad(format!("needs a positive multiple of {}", g.input_size())),
        }
    }

    fn forward(&self, x: &Array2<f64>, rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, Cache) {
        match self {
            Layer::Dense(d) => {
                let (y, c) = d.forward_cached(x);
                (y, Cache::Dense(c))
            }
            Layer::LayerNorm(n) => {
                let (y, c) = n.forward_cached(x);
                (y, Cache::LayerNorm(c))
            }
            Layer::Dropout(d) => match rng.and_then(|rng| d.mask(x.dim(), rng)) {
                Some(mask) => (x * &mask, Cache::Dropout(Some(mask))),
                None => (x.clone(), Cache::Dropout(None)),
            },
            Layer::BiGru(g) => {
                let (y, c) = g.forward_cached(x);
                (y, Cache::BiGru(c))
            }
        }
    }

    fn backward(
        &self,
        cache: &Cache,
        grad: Array2<f64>,
        pre_activation: bool,
        grads: &mut Vec<Vec<f64>>,
    ) -> Array2<f64> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense(c)) => d.backward(c, grad, pre_activation, grads),
            (Layer::LayerNorm(n), Cache::LayerNorm(c)) => n.backward(c, grad, grads),
            (Layer::Dropout(_), Cache::Dropout(mask)) => match mask {
                Some(m) => grad * m,
                None => grad,
            },
            (Layer::BiGru(g), Cache::BiGru(c)) => g.backward(c, grad, grads),
            _ => unreachable!("tape does not match network"),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => d.params(),
            Layer::LayerNorm(n) => n.params(),
            Layer::Dropout(_) => Vec::new(),
            Layer::BiGru(g) => g.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => d.params_mut(),
            Layer::LayerNorm(n) => n.params_mut(),
            Layer::Dropout(_) => Vec::new(),
            Layer::BiGru(g) => g.params_mut(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// Mean over every element of the batch.
    Mse,
    /// Mean over the batch of `−Σ y·ln p`; expects probabilities.
    CrossEntropy,
}

/// Parameter gradients, aligned with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_width: usize,
}

impl Network {
    /// Builds a network, checking that consecutive layer shapes line up.
    pub fn new(input_width: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_width;
        for layer in &layers {
            layer.validate()?;
            width = layer.output_width(width)?;
        }
        Ok(Network {
            layers,
            input_width,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.width_after(self.layers.len())
    }

    /// Feature width after the first `n` layers.
    pub fn width_after(&self, n: usize) -> usize {
        self.layers[..n]
            .iter()
            .fold(self.input_width, |w, l| l.output_width(w).expect("validated"))
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Evaluation-mode forward pass over every layer.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward_range(x, 0..self.layers.len())
    }

    /// Evaluation-mode forward pass over a contiguous slice of layers.
    pub fn forward_range(&self, x: &Array2<f64>, range: Range<usize>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(x, range, None)?.0)
    }

    /// Forward pass that records a tape. Dropout is active only when `rng`
    /// is given.
    pub fn forward_tape(
        &self,
        x: &Array2<f64>,
        range: Range<usize>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, Tape)> {
        if range.end > self.layers.len() || range.start > range.end {
            return Err(Error::Argument(format!("layer range {range:?} out of bounds")));
        }
        let want = self.width_after(range.start);
        if x.ncols() != want {
            return Err(Error::Dimension(format!(
                "network input expects {want} features, got {}",
                x.ncols()
            )));
        }
        let mut caches = Vec::with_capacity(range.len());
        let mut h = x.to_owned();
        for layer in &self.layers[range.clone()] {
            let (y, c) = layer.forward(&h, rng.as_deref_mut());
            caches.push(c);
            h = y;
        }
        Ok((h, Tape { caches, range }))
    }

    /// Reverse pass. Returns gradients for every parameter of the network
    /// (zeros for layers outside the taped range) and dL/dinput.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_output: Array2<f64>,
        last_pre_activation: bool,
    ) -> (Grads, Array2<f64>) {
        let mut per_layer: Vec<Vec<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect())
            .collect();
        let mut grad = grad_output;
        let last = tape.range.end.saturating_sub(1);
        for (i, cache) in tape.range.clone().zip(&tape.caches).rev() {
            let mut g = Vec::new();
            grad = self.layers[i].backward(cache, grad, last_pre_activation && i == last, &mut g);
            if !g.is_empty() {
                per_layer[i] = g;
            }
        }
        (Grads(per_layer.into_iter().flatten().collect()), grad)
    }

    /// Loss and parameter gradients for one batch.
    pub fn backprop(
        &self,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
        loss: Loss,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Grads)> {
        let (out, tape) = self.forward_tape(inputs, 0..self.layers.len(), rng)?;
        if out.dim() != targets.dim() {
            return Err(Error::Dimension(format!(
                "model output {:?} does not match targets {:?}",
                out.dim(),
                targets.dim()
            )));
        }
        let per_sample = sample_losses(&out, targets, loss);
        if let Some(index) = per_sample.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFiniteLoss { index });
        }
        let batch = out.nrows() as f64;
        let value = per_sample.iter().sum::<f64>() / batch;

        let softmax_head = matches!(
            self.layers.last(),
            Some(Layer::Dense(DenseLayer {
                activation: Activation::Softmax,
                ..
            }))
        );
        let (grad, pre_activation) = match loss {
            Loss::Mse => {
                let n = (out.len()) as f64;
                ((&out - targets) * (2.0 / n), false)
            }
            Loss::CrossEntropy if softmax_head => ((&out - targets) / batch, true),
            Loss::CrossEntropy => {
                let mut g = targets.clone();
                g.zip_mut_with(&out, |t, &p| *t = -*t / (p.max(f64::MIN_POSITIVE) * batch));
                (g, false)
            }
        };
        let (grads, _) = self.backward(&tape, grad, pre_activation);
        Ok((value, grads))
    }

    /// Batch loss without gradients. Dropout follows `rng` as in
    /// [`Network::backprop`].
    pub fn loss(
        &self,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
        loss: Loss,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let (out, _) = self.forward_tape(inputs, 0..self.layers.len(), rng)?;
        if out.dim() != targets.dim() {
            return Err(Error::Dimension("output/target shape mismatch".into()));
        }
        Ok(sample_losses(&out, targets, loss).iter().sum::<f64>() / out.nrows() as f64)
    }
}

fn sample_losses(out: &Array2<f64>, targets: &Array2<f64>, loss: Loss) -> Vec<f64> {
    out.rows()
        .into_iter()
        .zip(targets.rows())
        .map(|(o, t)| match loss {
            Loss::Mse => {
                o.iter().zip(t.iter()).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / o.len() as f64
            }
            Loss::CrossEntropy => -o
                .iter()
                .zip(t.iter())
                .filter(|(_, &t)| t != 0.0)
                .map(|(&p, &t)| t * p.max(f64::MIN_POSITIVE).ln())
                .sum::<f64>(),
        })
        .collect()
}
