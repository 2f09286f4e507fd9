use std::sync::OnceLock;

use twinforge_core::contracts::{device_source, divergence_demo, Outcome, StreamHub};
use twinforge_core::ledger::{DynamicMetadata, LedgerState, Trait};
use twinforge_core::models::{ThresholdConfig, Verdict};
use twinforge_core::neural::TrainConfig;
use twinforge_core::pipeline::{
    binding, contract_for, train_reference, ReferenceConfig, TrainedModels, UPDATER,
};
use twinforge_core::telemetry::BehaviouralPattern;

fn models() -> &'static TrainedModels {
    static MODELS: OnceLock<TrainedModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let cfg = ReferenceConfig {
            cycles_per_dt: 40,
            dae: TrainConfig {
                seed: 7,
                epochs: 20,
                ..TrainConfig::default()
            },
            ..ReferenceConfig::default()
        };
        train_reference(&cfg).expect("training")
    })
}

/// A test pattern of device `dt` that the classifier gets right with
/// confidence at least `min_conf`.
fn confident_pattern(dt: u32, min_conf: f64) -> BehaviouralPattern {
    let m = models();
    let thr = ThresholdConfig::new(min_conf).unwrap();
    m.split
        .test
        .iter()
        .filter(|p| p.dt_id() == dt)
        .find(|p| {
            let pred = m.classifier.predict(&m.dae.encode(p).unwrap(), thr).unwrap();
            pred.verdict == Verdict::Accept(dt as usize)
        })
        .cloned()
        .expect("a confidently classified pattern")
}

fn minted(state: &mut LedgerState) -> u64 {
    let doc = DynamicMetadata::new(
        "heater-0",
        "industrial heater twin",
        "ipfs://heater-0.png",
        vec![Trait::new("site", "plant-a")],
    );
    state.mint("owner", doc).unwrap()
}

#[test]
fn autoencoder_beats_constant_baseline() {
    let r = &models().dae_report;
    assert!(r.final_test_mse <= r.baseline_test_mse, "{r:?}");
}

#[test]
fn round_trip_error_close_to_training_error() {
    let m = models();
    let mut total = 0.0;
    for p in &m.split.test {
        let rebuilt = m.dae.decode(&m.dae.encode(p).unwrap()).unwrap();
        total += p
            .values()
            .iter()
            .zip(rebuilt.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / p.values().len() as f64;
    }
    let mse = total / m.split.test.len() as f64;
    assert!(mse <= 3.0 * m.dae_report.final_train_mse, "{mse}");
}

#[test]
fn verify_outcomes() {
    let m = models();
    let thr = ThresholdConfig::new(0.6).unwrap();
    let mut contract = contract_for(&m.dae, &m.classifier);
    let mut state = LedgerState::with_updater(UPDATER);
    let id = minted(&mut state);
    contract.bind(&state, binding(id, device_source(0))).unwrap();

    let own = confident_pattern(0, 0.6);
    let other = confident_pattern(2, 0.6);
    contract.update_metadata(UPDATER, id, &own, &mut state).unwrap();
    let genuine = contract.verify(id, &own, &state, thr).unwrap();
    assert_eq!(genuine.outcome, Outcome::Genuine);

    contract.update_metadata(UPDATER, id, &other, &mut state).unwrap();
    let fake = contract.verify(id, &own, &state, thr).unwrap();
    assert_eq!(fake.outcome, Outcome::Fake);
    assert_eq!(fake.updated_at, 2);

    // A threshold above every possible confidence rejects both sides.
    let strict = ThresholdConfig::new(1.0).unwrap();
    let ooc = contract.verify(id, &own, &state, strict).unwrap();
    assert_eq!(ooc.outcome, Outcome::OocUnknown);
}

#[test]
fn divergence_and_replay() {
    let m = models();
    let thr = ThresholdConfig::new(0.5).unwrap();
    let hub = StreamHub::by_device(&m.split.test);
    let mut contract = contract_for(&m.dae, &m.classifier);
    let mut state = LedgerState::with_updater(UPDATER);
    let id = minted(&mut state);
    contract.bind(&state, binding(id, device_source(0))).unwrap();
    let first = hub.pattern(&device_source(0), 0).unwrap().clone();
    contract.update_metadata(UPDATER, id, &first, &mut state).unwrap();

    let r = divergence_demo(&mut contract, &mut state, &hub, id, &device_source(3), 0, 3, thr)
        .unwrap();
    assert!(r.identical_at_creation);
    assert_eq!(r.similarity_after.fake, 100.0);
    assert!(r.metadata_diverged(), "{r:?}");

    let json = state.log_to_json();
    let rebuilt = LedgerState::from_log_json(&json).unwrap();
    assert_eq!(rebuilt, state);
    assert_eq!(
        rebuilt.full_similarity(id, r.genuine).unwrap(),
        state.full_similarity(id, r.genuine).unwrap()
    );
}

#[test]
fn constant_pattern_is_out_of_class() {
    let m = models();
    let thr = ThresholdConfig::new(0.695).unwrap();
    let flat = BehaviouralPattern::new(0, vec![0.0; 170]).unwrap();
    let direct = m.classifier.predict(&m.dae.encode(&flat).unwrap(), thr).unwrap();
    assert!(direct.confidence < 0.695, "{direct:?}");

    let mut contract = contract_for(&m.dae, &m.classifier);
    let mut state = LedgerState::with_updater(UPDATER);
    let id = minted(&mut state);
    contract.bind(&state, binding(id, device_source(0))).unwrap();
    contract
        .update_metadata(UPDATER, id, &confident_pattern(0, 0.695), &mut state)
        .unwrap();
    let v = contract.verify(id, &flat, &state, thr).unwrap();
    assert_eq!(v.outcome, Outcome::OocUnknown);
    assert_eq!(v.p_cached.verdict, Verdict::RejectOoc);
}
