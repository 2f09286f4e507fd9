//! End-to-end runs shared by the command line tool and the acceptance suite.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contracts::{
    device_source, divergence_demo, ModelRegistry, StreamHub, TwinBinding, TwinContract,
};
use crate::error::{Error, Result};
use crate::evaluation::Labelled;
use crate::ledger::{DynamicMetadata, LedgerState, Trait};
use crate::models::{
    train_classifier_with_hidden, train_dae, ClassifierModel, ClassifierReport, DaeModel,
    DaeReport, EncodedPattern, ThresholdConfig, DEFAULT_HIDDEN,
};
use crate::neural::TrainConfig;
use crate::telemetry::{generate_synthetic, normalize_and_split, window_cycles, DatasetSplit};

pub const UPDATER: &str = "twin-contract";
pub const ENCODER_REF: &str = "dae";
pub const CLASSIFIER_REF: &str = "clf";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub dt_count: u32,
    pub cycles_per_dt: u32,
    pub seed: u64,
    pub train_fraction: f64,
    pub dae: TrainConfig,
    pub classifier: TrainConfig,
    pub hidden_size: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            dt_count: 4,
            cycles_per_dt: 132,
            seed: 7,
            train_fraction: 0.8,
            dae: TrainConfig {
                seed: 7,
                ..TrainConfig::default()
            },
            classifier: TrainConfig {
                seed: 7,
                epochs: 15,
                ..TrainConfig::default()
            },
            hidden_size: DEFAULT_HIDDEN,
        }
    }
}

pub fn build_dataset(cfg: &ReferenceConfig) -> Result<DatasetSplit> {
    let cycles = generate_synthetic(cfg.dt_count, cfg.cycles_per_dt, cfg.seed)?;
    normalize_and_split(&window_cycles(&cycles), cfg.train_fraction, cfg.seed)
}

pub struct TrainedModels {
    pub split: DatasetSplit,
    pub dae: DaeModel,
    pub dae_report: DaeReport,
    pub classifier: ClassifierModel,
    pub classifier_report: ClassifierReport,
    pub train_encodings: Vec<EncodedPattern>,
    pub test_encodings: Vec<EncodedPattern>,
}

/// Generates the dataset, trains the autoencoder, encodes both splits and
/// trains the classifier on the encodings.
pub fn train_reference(cfg: &ReferenceConfig) -> Result<TrainedModels> {
    let split = build_dataset(cfg)?;
    let (dae, dae_report) = train_dae(&split, &cfg.dae)?;
    let train_encodings = dae.encode_batch(&split.train)?;
    let test_encodings = dae.encode_batch(&split.test)?;
    let (classifier, classifier_report) = train_classifier_with_hidden(
        &train_encodings,
        &test_encodings,
        &cfg.classifier,
        split.n_classes(),
        cfg.hidden_size,
    )?;
    Ok(TrainedModels {
        split,
        dae,
        dae_report,
        classifier,
        classifier_report,
        train_encodings,
        test_encodings,
    })
}

/// Pairs each prediction with the label carried by its encoding.
pub fn labelled_predictions(
    classifier: &ClassifierModel,
    encodings: &[EncodedPattern],
    thr: ThresholdConfig,
) -> Result<Vec<Labelled>> {
    let preds = classifier.predict_batch(encodings, thr)?;
    encodings
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (e, p))| {
            let label = e
                .dt_hint
                .ok_or_else(|| Error::Argument(format!("encoding {i} has no label")))?;
            Ok((label as usize, p))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub succeeded: usize,
    pub failed: usize,
}

/// Applies `ops` random registry operations, including ones that must fail
/// (unknown tokens, wrong owners, non-updater read-only writes).
pub fn ledger_workload(ops: usize, seed: u64) -> (LedgerState, WorkloadStats) {
    const ACCOUNTS: [&str; 4] = ["alice", "bob", "carol", UPDATER];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LedgerState::with_updater(UPDATER);
    let mut stats = WorkloadStats::default();
    for _ in 0..ops {
        let caller = *ACCOUNTS.choose(&mut rng).expect("accounts");
        // Ids up to two past the end so some lookups miss.
        let target = rng.random_range(1..state.next_id() + 2);
        let result = match rng.random_range(0..7u8) {
            0 => {
                let traits = (0..rng.random_range(0..6))
                    .map(|i| Trait::new(format!("t{i}"), format!("{}", rng.random_range(0..3))))
                    .collect();
                let doc = DynamicMetadata::new(
                    format!("dt-{}", rng.random_range(0..4)),
                    "heater",
                    "img",
                    traits,
                );
                state.mint(caller, doc).map(|_| ())
            }
            1 => {
                let uri = format!("{}{target}", crate::ledger::URI_PREFIX);
                state.clone_by_uri(caller, &uri).map(|_| ())
            }
            2 => state.clone_by_token_id(caller, target).map(|_| ()),
            3 => {
                let fields = rng.random_range(0..5);
                let s = rng.random();
                state.clone_random(caller, target, fields, s).map(|_| ())
            }
            4 => {
                let t = Trait::new(format!("t{}", rng.random_range(0..6)), "x");
                state.update_writable(caller, target, vec![t]).map(|_| ())
            }
            5 => {
                let enc = (0..62).map(|_| rng.random_range(-3.0..3.0)).collect();
                state.write_read_only(caller, target, enc).map(|_| ())
            }
            _ => {
                // Malformed encodings must be refused even from the updater.
                let enc = vec![0.0; rng.random_range(0..61)];
                state.write_read_only(UPDATER, target, enc).map(|_| ())
            }
        };
        match result {
            Ok(()) => stats.succeeded += 1,
            Err(_) => stats.failed += 1,
        }
    }
    (state, stats)
}

/// Contract over the given models with the ledger's updater identity.
pub fn contract_for(dae: &DaeModel, classifier: &ClassifierModel) -> TwinContract {
    let mut registry = ModelRegistry::new();
    registry.register_encoder(ENCODER_REF, dae.clone());
    registry.register_classifier(CLASSIFIER_REF, classifier.clone());
    TwinContract::new(UPDATER, registry)
}

pub fn binding(token_id: u64, data_source: String) -> TwinBinding {
    TwinBinding {
        token_id,
        data_source,
        encoder_ref: ENCODER_REF.into(),
        classifier_ref: CLASSIFIER_REF.into(),
        update_interval: 1,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub metadata_diverged: usize,
    pub verified: usize,
    pub unchanged_at_zero_ticks: usize,
}

/// Seeded divergence trials over random (original, fake) device pairs drawn
/// from the test streams.
pub fn divergence_trials(
    dae: &DaeModel,
    classifier: &ClassifierModel,
    hub: &StreamHub,
    n_devices: u32,
    trials: usize,
    seed: u64,
    thr: ThresholdConfig,
) -> Result<TrialSummary> {
    if n_devices < 2 {
        return Err(Error::Argument("need at least two devices".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = TrialSummary {
        trials,
        ..TrialSummary::default()
    };
    let base = contract_for(dae, classifier);
    for _ in 0..trials {
        let a = rng.random_range(0..n_devices);
        let b = (a + rng.random_range(1..n_devices)) % n_devices;
        let start = rng.random_range(0..1000u64);

        // Without ticks nothing may change.
        let (mut c0, mut s0, orig0) = bound_original(&base, hub, a, start)?;
        let r0 = divergence_demo(&mut c0, &mut s0, hub, orig0, &device_source(b), start, 0, thr)?;
        if r0.identical_at_creation
            && r0.full_similarity_after.genuine == 100.0
            && r0.full_similarity_after.fake == 100.0
        {
            summary.unchanged_at_zero_ticks += 1;
        }

        let (mut c, mut s, orig) = bound_original(&base, hub, a, start)?;
        let r = divergence_demo(&mut c, &mut s, hub, orig, &device_source(b), start, 1, thr)?;
        summary.metadata_diverged += usize::from(r.metadata_diverged());
        summary.verified += usize::from(r.verified());
    }
    Ok(summary)
}

/// Fresh ledger with one original token bound to device `dt` and updated
/// once at `tick`.
fn bound_original(
    base: &TwinContract,
    hub: &StreamHub,
    dt: u32,
    tick: u64,
) -> Result<(TwinContract, LedgerState, u64)> {
    let mut contract = base.clone();
    let mut state = LedgerState::with_updater(UPDATER);
    let doc = DynamicMetadata::new(
        format!("heater-{dt}"),
        "industrial heater twin",
        format!("ipfs://heater-{dt}.png"),
        vec![Trait::new("site", "plant-a"), Trait::new("model", "H-200")],
    );
    let id = state.mint("owner", doc)?;
    contract.bind(&state, binding(id, device_source(dt)))?;
    let live = hub.pattern(&device_source(dt), tick)?.clone();
    contract.update_metadata(UPDATER, id, &live, &mut state)?;
    Ok((contract, state, id))
}
