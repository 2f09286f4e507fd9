//! The denoising autoencoder that compresses 34×5 patterns to 62 values and
//! the Bi-GRU classifier that maps encodings to device identities.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{
    decode_network, encode_network, optimize_step, Activation, AdamState, BiGruLayer, DenseLayer,
    Dropout, Layer, LayerNorm, LayerSpec, Loss, Network, TrainConfig,
};
use crate::telemetry::{BehaviouralPattern, FEATURES, PATTERN_LEN, WINDOW_ROWS};

/// Length of an encoded pattern.
pub const ENCODING_LEN: usize = 62;

/// Encoder widths from the flattened pattern down to the encoding.
pub const ENCODER_WIDTHS: [usize; 6] = [PATTERN_LEN, 144, 120, 100, 82, ENCODING_LEN];

/// Default Bi-GRU hidden size per direction.
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedPattern {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_hint: Option<u32>,
}

impl EncodedPattern {
    pub fn new(values: Vec<f64>, dt_hint: Option<u32>) -> Result<Self> {
        if values.len() != ENCODING_LEN {
            return Err(Error::Dimension(format!(
                "encoding must have {ENCODING_LEN} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("encoding contains non-finite values".into()));
        }
        Ok(EncodedPattern { values, dt_hint })
    }
}

fn rows_to_matrix<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, width), data).expect("rows have uniform width")
}

fn pattern_matrix(patterns: &[BehaviouralPattern]) -> Array2<f64> {
    rows_to_matrix(patterns.iter().map(BehaviouralPattern::values), PATTERN_LEN)
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|v| v * v).mean().unwrap_or(f64::NAN)
}

/// Dense → layer norm → dropout blocks through `widths`, optionally capped by
/// a sigmoid output layer.
fn block_stack(
    widths: &[usize],
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Layer>> {
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        layers.push(Layer::Dense(DenseLayer::new(w[0], w[1], Activation::Tanh, rng)));
        layers.push(Layer::LayerNorm(LayerNorm::new(w[1])));
        layers.push(Layer::Dropout(Dropout::new(dropout)?));
    }
    Ok(layers)
}

fn dae_architecture(widths: &[usize], dropout: f64) -> Vec<LayerSpec> {
    let mut spec = Vec::new();
    let mut block = |a: usize, b: usize| {
        spec.push(LayerSpec::Dense {
            inputs: a,
            outputs: b,
            activation: Activation::Tanh,
        });
        spec.push(LayerSpec::LayerNorm { dim: b });
        spec.push(LayerSpec::Dropout { rate: dropout });
    };
    for w in widths.windows(2) {
        block(w[0], w[1]);
    }
    let rev: Vec<usize> = widths.iter().rev().copied().collect();
    for w in rev[..rev.len() - 1].windows(2) {
        block(w[0], w[1]);
    }
    spec.push(LayerSpec::Dense {
        inputs: rev[rev.len() - 2],
        outputs: rev[rev.len() - 1],
        activation: Activation::Sigmoid,
    });
    spec
}

/// Denoising autoencoder. The encoder is the first `encoder_layers` layers of
/// `network`; the decoder mirrors it and ends in a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct DaeModel {
    network: Network,
    encoder_layers: usize,
    pub input_noise_sigma: f64,
}

impl DaeModel {
    /// Reference architecture 170→144→120→100→82→62 and its mirror.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        DaeModel::with_widths(
            &ENCODER_WIDTHS,
            config.dropout_rate,
            config.input_noise_sigma,
            config.seed,
        )
    }

    /// Autoencoder with arbitrary encoder widths (input first, code last).
    pub fn with_widths(widths: &[usize], dropout: f64, sigma: f64, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Argument("need at least input and code widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = block_stack(widths, dropout, &mut rng)?;
        let encoder_layers = layers.len();
        let rev: Vec<usize> = widths.iter().rev().copied().collect();
        layers.extend(block_stack(&rev[..rev.len() - 1], dropout, &mut rng)?);
        layers.push(Layer::Dense(DenseLayer::new(
            rev[rev.len() - 2],
            rev[rev.len() - 1],
            Activation::Sigmoid,
            &mut rng,
        )));
        Ok(DaeModel {
            network: Network::new(widths[0], layers)?,
            encoder_layers,
            input_noise_sigma: sigma,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn code_width(&self) -> usize {
        self.network.width_after(self.encoder_layers)
    }

    /// Evaluation-mode encoding of many patterns at once.
    pub fn encode_batch(&self, patterns: &[BehaviouralPattern]) -> Result<Vec<EncodedPattern>> {
        self.check_reference()?;
        if patterns.is_empty() {
            return Ok(Vec::new());
        }
        let codes = self
            .network
            .forward_range(&pattern_matrix(patterns), 0..self.encoder_layers)?;
        codes
            .rows()
            .into_iter()
            .zip(patterns)
            .map(|(row, p)| EncodedPattern::new(row.to_vec(), Some(p.dt_id())))
            .collect()
    }

    /// Flattens the pattern row-major and runs the encoder without noise or
    /// dropout.
    pub fn encode(&self, pattern: &BehaviouralPattern) -> Result<EncodedPattern> {
        Ok(self.encode_batch(std::slice::from_ref(pattern))?.remove(0))
    }

    /// Reconstructs a 34×5 matrix clamped to [0, 1].
    pub fn decode(&self, enc: &EncodedPattern) -> Result<Array2<f64>> {
        self.check_reference()?;
        if enc.values.len() != ENCODING_LEN {
            return Err(Error::Dimension(format!(
                "decoder expects {ENCODING_LEN} values, got {}",
                enc.values.len()
            )));
        }
        let x = Array2::from_shape_vec((1, ENCODING_LEN), enc.values.clone()).expect("row");
        let out = self
            .network
            .forward_range(&x, self.encoder_layers..self.network.layers().len())?;
        Ok(out
            .into_shape_with_order((WINDOW_ROWS, FEATURES))
            .expect("170 outputs")
            .mapv(|v| v.clamp(0.0, 1.0)))
    }

    /// Mean squared reconstruction error in evaluation mode.
    pub fn reconstruction_mse(&self, patterns: &[BehaviouralPattern]) -> Result<f64> {
        if patterns.is_empty() {
            return Err(Error::Argument("no patterns".into()));
        }
        let x = pattern_matrix(patterns);
        let out = self.network.forward(&x)?.mapv(|v| v.clamp(0.0, 1.0));
        Ok(mse(&out, &x))
    }

    fn check_reference(&self) -> Result<()> {
        if self.network.input_width() != PATTERN_LEN || self.code_width() != ENCODING_LEN {
            return Err(Error::Dimension(format!(
                "autoencoder maps {}→{}, expected {PATTERN_LEN}→{ENCODING_LEN}",
                self.network.input_width(),
                self.code_width()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_network(&self.network)
    }

    /// Loads `dae.twm`, checking it has the reference architecture.
    pub fn from_bytes(bytes: &[u8], input_noise_sigma: f64) -> Result<Self> {
        let network = decode_network(bytes, PATTERN_LEN)?;
        let rate = match network.layers().get(2) {
            Some(Layer::Dropout(d)) => d.rate,
            _ => return Err(Error::format("dae weights", "missing dropout after first block")),
        };
        if network.architecture() != dae_architecture(&ENCODER_WIDTHS, rate) {
            return Err(Error::format("dae weights", "not the reference autoencoder"));
        }
        Ok(DaeModel {
            network,
            encoder_layers: 3 * (ENCODER_WIDTHS.len() - 1),
            input_noise_sigma,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeReport {
    pub config: TrainConfig,
    pub epochs: Vec<DaeEpoch>,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    /// Test MSE of the best constant predictor (per-element train mean).
    pub baseline_test_mse: f64,
}

/// Shuffled mini-batch Adam loop shared by both models. `prepare` turns the
/// clean batch into the network input.
fn run_epoch(
    net: &mut Network,
    state: &mut AdamState,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: Loss,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    mut prepare: impl FnMut(Array2<f64>, &mut ChaCha8Rng) -> Array2<f64>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let x = prepare(inputs.select(Axis(0), chunk), rng);
        let y = targets.select(Axis(0), chunk);
        let (value, grads) = net
            .backprop(&x, &y, loss, Some(&mut *rng))
            .map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::Training { epoch },
                other => other,
            })?;
        total += value * chunk.len() as f64;
        let mut params = net.params_mut();
        optimize_step(&mut params, &grads.0, state, config)?;
    }
    Ok(total / inputs.nrows() as f64)
}

/// Trains on noise-corrupted inputs against clean targets with MSE loss.
pub fn train_dae(
    split: &crate::telemetry::DatasetSplit,
    config: &TrainConfig,
) -> Result<(DaeModel, DaeReport)> {
    config.validate()?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Argument("train and test splits must be non-empty".into()));
    }
    let mut model = DaeModel::new(config)?;
    let train = pattern_matrix(&split.train);
    let test = pattern_matrix(&split.test);
    let noise = Normal::new(0.0, config.input_noise_sigma.max(0.0))
        .map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut state = AdamState::for_params(&model.network.params());
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        run_epoch(
            &mut model.network,
            &mut state,
            &train,
            &train,
            Loss::Mse,
            config,
            &mut rng,
            epoch,
            |mut x, rng| {
                if config.input_noise_sigma > 0.0 {
                    x.mapv_inplace(|v| v + noise.sample(rng));
                }
                x
            },
        )?;
        let train_mse = model.reconstruction_mse(&split.train)?;
        let test_mse = model.reconstruction_mse(&split.test)?;
        if !train_mse.is_finite() || !test_mse.is_finite() {
            return Err(Error::Training { epoch });
        }
        log::info!("dae epoch {epoch}: train mse {train_mse:.5}, test mse {test_mse:.5}");
        epochs.push(DaeEpoch {
            epoch,
            train_mse,
            test_mse,
        });
    }

    let mean = train.mean_axis(Axis(0)).expect("non-empty");
    let baseline_test_mse = (&test - &mean).mapv(|v| v * v).mean().unwrap_or(f64::NAN);
    let report = DaeReport {
        config: config.clone(),
        final_train_mse: model.reconstruction_mse(&split.train)?,
        final_test_mse: model.reconstruction_mse(&split.test)?,
        epochs,
        baseline_test_mse,
    };
    Ok((model, report))
}

/// Confidence threshold τ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    tau: f64,
}

impl ThresholdConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Argument(format!("tau {tau} not in [0, 1]")));
        }
        Ok(ThresholdConfig { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Accept(usize),
    RejectOoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub class: usize,
    pub confidence: f64,
    pub verdict: Verdict,
}

impl Prediction {
    /// Argmax (first maximum on ties) with `confidence ≥ τ` acceptance.
    pub fn from_scores(scores: Vec<f64>, thr: ThresholdConfig) -> Result<Self> {
        let (class, confidence) = scores
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            })
            .ok_or_else(|| Error::Argument("empty score vector".into()))?;
        let verdict = if confidence >= thr.tau() {
            Verdict::Accept(class)
        } else {
            Verdict::RejectOoc
        };
        Ok(Prediction {
            scores,
            class,
            confidence,
            verdict,
        })
    }

    pub fn accepted_class(&self) -> Option<usize> {
        match self.verdict {
            Verdict::Accept(c) => Some(c),
            Verdict::RejectOoc => None,
        }
    }
}

/// Bi-GRU over the encoding read as a length-62 scalar sequence, followed by
/// a softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    network: Network,
    n_classes: usize,
}

impl ClassifierModel {
    pub fn new(n_classes: usize, hidden: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 || hidden == 0 {
            return Err(Error::Argument(format!(
                "need >= 2 classes and a positive hidden size (got {n_classes}, {hidden})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::new(
            ENCODING_LEN,
            vec![
                Layer::BiGru(BiGruLayer::new(1, hidden, &mut rng)),
                Layer::Dense(DenseLayer::new(2 * hidden, n_classes, Activation::Softmax, &mut rng)),
            ],
        )?;
        Ok(ClassifierModel { network, n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Softmax scores for a batch of encodings.
    pub fn scores(&self, encodings: &[EncodedPattern]) -> Result<Array2<f64>> {
        if let Some(e) = encodings.iter().find(|e| e.values.len() != ENCODING_LEN) {
            return Err(Error::Dimension(format!(
                "classifier expects {ENCODING_LEN} values, got {}",
                e.values.len()
            )));
        }
        let x = rows_to_matrix(encodings.iter().map(|e| e.values.as_slice()), ENCODING_LEN);
        self.network.forward(&x)
    }

    pub fn predict(&self, enc: &EncodedPattern, thr: ThresholdConfig) -> Result<Prediction> {
        Ok(self.predict_batch(std::slice::from_ref(enc), thr)?.remove(0))
    }

    pub fn predict_batch(
        &self,
        encodings: &[EncodedPattern],
        thr: ThresholdConfig,
    ) -> Result<Vec<Prediction>> {
        if encodings.is_empty() {
            return Ok(Vec::new());
        }
        self.scores(encodings)?
            .rows()
            .into_iter()
            .map(|r| Prediction::from_scores(r.to_vec(), thr))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_network(&self.network)
    }

    /// Loads `clf.twm`, checking for a Bi-GRU over 1-dim steps and a softmax
    /// head.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let network = decode_network(bytes, ENCODING_LEN)?;
        match network.architecture().as_slice() {
            [LayerSpec::BiGru { input: 1, hidden }, LayerSpec::Dense {
                inputs,
                outputs,
                activation: Activation::Softmax,
            }] if *inputs == 2 * hidden && *outputs >= 2 => {
                let n_classes = *outputs;
                Ok(ClassifierModel { network, n_classes })
            }
            other => Err(Error::format(
                "classifier weights",
                format!("unexpected architecture {other:?}"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub config: TrainConfig,
    pub hidden_size: usize,
    pub epochs: Vec<ClassifierEpoch>,
    pub final_test_accuracy: f64,
    pub final_test_loss: f64,
}

fn labelled(encodings: &[EncodedPattern], n_classes: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut y = Array2::zeros((encodings.len(), n_classes));
    for (i, e) in encodings.iter().enumerate() {
        let label = e
            .dt_hint
            .ok_or_else(|| Error::Argument(format!("encoding {i} has no label")))?
            as usize;
        if label >= n_classes {
            return Err(Error::Argument(format!(
                "label {label} of encoding {i} outside [0, {n_classes})"
            )));
        }
        y[[i, label]] = 1.0;
    }
    if let Some(e) = encodings.iter().find(|e| e.values.len() != ENCODING_LEN) {
        return Err(Error::Dimension(format!("encoding of length {}", e.values.len())));
    }
    let x = rows_to_matrix(encodings.iter().map(|e| e.values.as_slice()), ENCODING_LEN);
    Ok((x, y))
}

fn loss_and_accuracy(net: &Network, x: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, f64)> {
    let p = net.forward(x)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (pr, yr) in p.rows().into_iter().zip(y.rows()) {
        let truth = yr.iter().position(|&v| v == 1.0).expect("one-hot");
        loss -= pr[truth].max(f64::MIN_POSITIVE).ln();
        let guess = Prediction::from_scores(pr.to_vec(), ThresholdConfig { tau: 0.0 })?.class;
        correct += usize::from(guess == truth);
    }
    let n = x.nrows() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn train_classifier(
    train: &[EncodedPattern],
    test: &[EncodedPattern],
    config: &TrainConfig,
    n_classes: usize,
) -> Result<(ClassifierModel, ClassifierReport)> {
    train_classifier_with_hidden(train, test, config, n_classes, DEFAULT_HIDDEN)
}

/// Cross-entropy training of the Bi-GRU classifier on labelled encodings.
pub fn train_classifier_with_hidden(
    train: &[EncodedPattern],
    test: &[EncodedPattern],
    config: &TrainConfig,
    n_classes: usize,
    hidden: usize,
) -> Result<(ClassifierModel, ClassifierReport)> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Argument("train and test encodings must be non-empty".into()));
    }
    let (x_train, y_train) = labelled(train, n_classes)?;
    let (x_test, y_test) = labelled(test, n_classes)?;
    let mut model = ClassifierModel::new(n_classes, hidden, config.seed)?;
    let mut state = AdamState::for_params(&model.network.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xc1f));
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        run_epoch(
            &mut model.network,
            &mut state,
            &x_train,
            &y_train,
            Loss::CrossEntropy,
            config,
            &mut rng,
            epoch,
            |x, _| x,
        )?;
        let (train_loss, train_accuracy) = loss_and_accuracy(&model.network, &x_train, &y_train)?;
        let (test_loss, test_accuracy) = loss_and_accuracy(&model.network, &x_test, &y_test)?;
        if !train_loss.is_finite() || !test_loss.is_finite() {
            return Err(Error::Training { epoch });
        }
        log::info!(
            "classifier epoch {epoch}: loss {train_loss:.4} acc {train_accuracy:.4} | test loss {test_loss:.4} acc {test_accuracy:.4}"
        );
        epochs.push(ClassifierEpoch {
            epoch,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
        });
    }
    let (final_test_loss, final_test_accuracy) =
        loss_and_accuracy(&model.network, &x_test, &y_test)?;
    Ok((
        model,
        ClassifierReport {
            config: config.clone(),
            hidden_size: hidden,
            epochs,
            final_test_accuracy,
            final_test_loss,
        },
    ))
}
