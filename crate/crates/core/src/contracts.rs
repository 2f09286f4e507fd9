//! Contract logic binding tokens to live telemetry: metadata refresh from the
//! encoder, clone verification through the classifier, and the clone
//! divergence demonstration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{full_similarity, metadata_similarity, LedgerState, TokenId};
use crate::models::{
    ClassifierModel, DaeModel, EncodedPattern, Prediction, ThresholdConfig, Verdict,
};
use crate::telemetry::BehaviouralPattern;

/// Named encoder and classifier instances that bindings refer to.
#[derive(Clone, Debug, Default)]
pub struct ModelRegistry {
    encoders: BTreeMap<String, DaeModel>,
    classifiers: BTreeMap<String, ClassifierModel>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_encoder(&mut self, name: impl Into<String>, model: DaeModel) {
        self.encoders.insert(name.into(), model);
    }

    pub fn register_classifier(&mut self, name: impl Into<String>, model: ClassifierModel) {
        self.classifiers.insert(name.into(), model);
    }

    pub fn encoder(&self, name: &str) -> Result<&DaeModel> {
        self.encoders
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("encoder {name}")))
    }

    pub fn classifier(&self, name: &str) -> Result<&ClassifierModel> {
        self.classifiers
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("classifier {name}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwinBinding {
    pub token_id: TokenId,
    /// Identifier of the telemetry stream feeding this token.
    pub data_source: String,
    pub encoder_ref: String,
    pub classifier_ref: String,
    /// Update every this many ticks.
    pub update_interval: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Genuine,
    Fake,
    OocUnknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub token_id: TokenId,
    pub outcome: Outcome,
    /// Prediction on the encoding stored in the token's metadata.
    pub p_alpha: Prediction,
    /// Prediction on the encoded cached pattern.
    pub p_cached: Prediction,
    pub tau: f64,
    pub updated_at: u64,
    pub detail: String,
}

/// Live telemetry streams keyed by source name. The pattern at a tick is
/// taken cyclically from the stream.
#[derive(Clone, Debug, Default)]
pub struct StreamHub {
    streams: BTreeMap<String, Vec<BehaviouralPattern>>,
}

impl StreamHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: impl Into<String>, patterns: Vec<BehaviouralPattern>) -> Result<()> {
        if patterns.is_empty() {
            return Err(Error::Argument("stream needs at least one pattern".into()));
        }
        self.streams.insert(source.into(), patterns);
        Ok(())
    }

    /// One stream per device, named `dt-<id>`.
    pub fn by_device(patterns: &[BehaviouralPattern]) -> Self {
        let mut hub = StreamHub::new();
        for p in patterns {
            hub.streams
                .entry(device_source(p.dt_id()))
                .or_default()
                .push(p.clone());
        }
        hub
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.streams.keys().map(String::as_str)
    }

    pub fn pattern(&self, source: &str, tick: u64) -> Result<&BehaviouralPattern> {
        let s = self
            .streams
            .get(source)
            .ok_or_else(|| Error::NotFound(format!("data source {source}")))?;
        Ok(&s[(tick % s.len() as u64) as usize])
    }
}

pub fn device_source(dt_id: u32) -> String {
    format!("dt-{dt_id}")
}

/// The contract: owns the updater identity, the model registry and one
/// binding per token.
#[derive(Clone, Debug)]
pub struct TwinContract {
    updater: String,
    registry: ModelRegistry,
    bindings: BTreeMap<TokenId, TwinBinding>,
}

impl TwinContract {
    pub fn new(updater: impl Into<String>, registry: ModelRegistry) -> Self {
        TwinContract {
            updater: updater.into(),
            registry,
            bindings: BTreeMap::new(),
        }
    }

    pub fn updater(&self) -> &str {
        &self.updater
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn bindings(&self) -> &BTreeMap<TokenId, TwinBinding> {
        &self.bindings
    }

    pub fn bind(&mut self, state: &LedgerState, binding: TwinBinding) -> Result<()> {
        state.token(binding.token_id)?;
        self.registry.encoder(&binding.encoder_ref)?;
        self.registry.classifier(&binding.classifier_ref)?;
        if binding.update_interval == 0 {
            return Err(Error::Argument("update_interval must be positive".into()));
        }
        if self.bindings.contains_key(&binding.token_id) {
            return Err(Error::State(format!("token {} already bound", binding.token_id)));
        }
        self.bindings.insert(binding.token_id, binding);
        Ok(())
    }

    pub fn binding(&self, token_id: TokenId) -> Result<&TwinBinding> {
        self.bindings
            .get(&token_id)
            .ok_or_else(|| Error::NotFound(format!("no binding for token {token_id}")))
    }

    /// Encodes the live pattern with the token's encoder and writes it to the
    /// read-only attributes.
    pub fn update_metadata(
        &self,
        caller: &str,
        token_id: TokenId,
        live: &BehaviouralPattern,
        state: &mut LedgerState,
    ) -> Result<()> {
        if caller != self.updater {
            return Err(Error::Authorization(format!(
                "{caller} is not the contract updater"
            )));
        }
        let binding = self.binding(token_id)?;
        let enc = self.registry.encoder(&binding.encoder_ref)?.encode(live)?;
        state.write_read_only(&self.updater, token_id, enc.values)
    }

    /// Runs one update round: every binding due at `tick` is refreshed from
    /// its stream.
    pub fn tick(&self, tick: u64, hub: &StreamHub, state: &mut LedgerState) -> Result<()> {
        for b in self.bindings.values() {
            if tick.is_multiple_of(b.update_interval) {
                let live = hub.pattern(&b.data_source, tick)?;
                self.update_metadata(&self.updater, b.token_id, live, state)?;
            }
        }
        Ok(())
    }

    /// Compares the classifier's verdict on the stored encoding with its
    /// verdict on the encoded cached pattern.
    pub fn verify(
        &self,
        token_id: TokenId,
        cached: &BehaviouralPattern,
        state: &LedgerState,
        thr: ThresholdConfig,
    ) -> Result<VerificationVerdict> {
        let binding = self.binding(token_id)?;
        let meta = state.metadata(token_id)?;
        if meta.read_only.pattern_encoding.is_empty() {
            return Err(Error::State(format!("token {token_id} never updated")));
        }
        let encoder = self.registry.encoder(&binding.encoder_ref)?;
        let classifier = self.registry.classifier(&binding.classifier_ref)?;
        let live = EncodedPattern::new(meta.read_only.pattern_encoding.clone(), None)?;
        let p_alpha = classifier.predict(&live, thr)?;
        let p_cached = classifier.predict(&encoder.encode(cached)?, thr)?;
        let (outcome, detail) = match (p_alpha.verdict, p_cached.verdict) {
            (Verdict::Accept(a), Verdict::Accept(c)) if a == c => {
                (Outcome::Genuine, format!("both patterns classified as {a}"))
            }
            (Verdict::Accept(a), Verdict::Accept(c)) => (
                Outcome::Fake,
                format!("stored pattern classified as {a}, cached pattern as {c}"),
            ),
            _ => (
                Outcome::OocUnknown,
                format!(
                    "confidence below tau {} (stored {:.4}, cached {:.4})",
                    thr.tau(),
                    p_alpha.confidence,
                    p_cached.confidence
                ),
            ),
        };
        Ok(VerificationVerdict {
            token_id,
            outcome,
            p_alpha,
            p_cached,
            tau: thr.tau(),
            updated_at: meta.read_only.updated_at,
            detail,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub genuine: f64,
    pub fake: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub original: TokenId,
    pub genuine: TokenId,
    pub fake: TokenId,
    pub fake_source: String,
    pub ticks: u64,
    /// Both clones' documents equal the original's at creation.
    pub identical_at_creation: bool,
    pub similarity_before: SimilarityPair,
    pub full_similarity_before: SimilarityPair,
    pub similarity_after: SimilarityPair,
    pub full_similarity_after: SimilarityPair,
    pub genuine_matches_original: bool,
    pub fake_encoding_differs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genuine_verdict: Option<VerificationVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake_verdict: Option<VerificationVerdict>,
}

impl DivergenceReport {
    /// Clones start identical; afterwards the genuine clone still matches and
    /// the fake one does not.
    pub fn metadata_diverged(&self) -> bool {
        self.identical_at_creation
            && self.genuine_matches_original
            && self.fake_encoding_differs
            && self.full_similarity_after.fake < 100.0
            && self.full_similarity_after.genuine == 100.0
    }

    /// Verification separated the two clones.
    pub fn verified(&self) -> bool {
        matches!(
            (&self.genuine_verdict, &self.fake_verdict),
            (Some(g), Some(f)) if g.outcome == Outcome::Genuine && f.outcome == Outcome::Fake
        )
    }
}

/// Clones `original` twice at the same instant: a genuine clone fed by the
/// original's stream and a fake clone fed by `fake_source`. Runs `ticks`
/// update rounds on the three tokens starting at `start_tick`, then verifies
/// both clones against the original's pattern at the clone instant.
pub fn divergence_demo(
    contract: &mut TwinContract,
    state: &mut LedgerState,
    hub: &StreamHub,
    original: TokenId,
    fake_source: &str,
    start_tick: u64,
    ticks: u64,
    thr: ThresholdConfig,
) -> Result<DivergenceReport> {
    let binding = contract.binding(original)?.clone();
    if binding.data_source == fake_source {
        return Err(Error::Argument("fake clone needs a different data source".into()));
    }
    hub.pattern(fake_source, 0)?;
    let owner = state.token(original)?.owner.clone();
    let uri = state.token(original)?.uri.clone();
    let genuine = state.clone_by_token_id(&owner, original)?;
    let fake = state.clone_by_uri("attacker", &uri)?;
    for (token_id, source) in [(genuine, binding.data_source.clone()), (fake, fake_source.to_string())] {
        contract.bind(
            state,
            TwinBinding {
                token_id,
                data_source: source,
                ..binding.clone()
            },
        )?;
    }

    let o = state.metadata(original)?;
    let identical_at_creation = [genuine, fake].iter().all(|&id| {
        state.metadata(id).is_ok_and(|m| {
            m == o && serde_json::to_vec(m).ok() == serde_json::to_vec(o).ok()
        })
    });
    let pair = |state: &LedgerState, f: fn(&_, &_) -> f64| -> Result<SimilarityPair> {
        let o = state.metadata(original)?;
        Ok(SimilarityPair {
            genuine: f(o, state.metadata(genuine)?),
            fake: f(o, state.metadata(fake)?),
        })
    };
    let similarity_before = pair(state, metadata_similarity)?;
    let full_similarity_before = pair(state, full_similarity)?;

    let updater = contract.updater().to_string();
    for t in start_tick + 1..=start_tick + ticks {
        for id in [original, genuine, fake] {
            let source = &contract.binding(id)?.data_source;
            let live = hub.pattern(source, t)?.clone();
            contract.update_metadata(&updater, id, &live, state)?;
        }
    }

    let enc = |id| -> Result<Vec<u64>> {
        Ok(state
            .metadata(id)?
            .read_only
            .pattern_encoding
            .iter()
            .map(|v| v.to_bits())
            .collect())
    };
    let genuine_matches_original = enc(genuine)? == enc(original)?;
    let fake_encoding_differs = enc(fake)? != enc(original)?;

    let cached = hub.pattern(&binding.data_source, start_tick)?;
    let verdict = |id| -> Result<Option<VerificationVerdict>> {
        if state.metadata(id)?.read_only.pattern_encoding.is_empty() {
            return Ok(None);
        }
        contract.verify(id, cached, state, thr).map(Some)
    };
    Ok(DivergenceReport {
        original,
        genuine,
        fake,
        fake_source: fake_source.to_string(),
        ticks,
        identical_at_creation,
        similarity_before,
        full_similarity_before,
        similarity_after: pair(state, metadata_similarity)?,
        full_similarity_after: pair(state, full_similarity)?,
        genuine_matches_original,
        fake_encoding_differs,
        genuine_verdict: verdict(genuine)?,
        fake_verdict: verdict(fake)?,
    })
}
