//! Simulated NFT registry with dynamic metadata documents.
//!
//! All state is derived from an append-only event log; [`LedgerState::replay`]
//! rebuilds it and `ledger.json` stores only the log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ENCODING_LEN;

/// Prefix of every metadata locator handed out by the registry.
pub const URI_PREFIX: &str = "twin://registry/";

pub type TokenId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Mint,
    CloneByUri,
    CloneByTokenId,
    CloneRandom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trait {
    pub trait_type: String,
    pub value: String,
}

impl Trait {
    pub fn new(trait_type: impl Into<String>, value: impl Into<String>) -> Self {
        Trait {
            trait_type: trait_type.into(),
            value: value.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadOnlyAttributes {
    /// Latest encoded behavioural pattern; empty until the first update.
    pub pattern_encoding: Vec<f64>,
    pub updated_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicMetadata {
    pub name: String,
    pub description: String,
    pub image: String,
    #[serde(rename = "readOnly_attributes")]
    pub read_only: ReadOnlyAttributes,
    pub writable_attributes: Vec<Trait>,
}

impl DynamicMetadata {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        image: impl Into<String>,
        writable_attributes: Vec<Trait>,
    ) -> Self {
        DynamicMetadata {
            name: name.into(),
            description: description.into(),
            image: image.into(),
            read_only: ReadOnlyAttributes::default(),
            writable_attributes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.read_only.pattern_encoding;
        if !enc.is_empty() && enc.len() != ENCODING_LEN {
            return Err(Error::Validation(format!(
                "pattern_encoding must have {ENCODING_LEN} values, got {}",
                enc.len()
            )));
        }
        if enc.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("pattern_encoding contains non-finite values".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.writable_attributes {
            if t.trait_type.is_empty() {
                return Err(Error::Validation("empty trait_type".into()));
            }
            if !seen.insert(t.trait_type.as_str()) {
                return Err(Error::Validation(format!("duplicate trait_type {:?}", t.trait_type)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DynamicMetadata = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }

    /// Static key-value view: the three fixed fields plus every writable
    /// trait.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("name".to_string(), self.name.clone());
        m.insert("description".to_string(), self.description.clone());
        m.insert("image".to_string(), self.image.clone());
        for t in &self.writable_attributes {
            m.insert(format!("trait:{}", t.trait_type), t.value.clone());
        }
        m
    }

    /// [`flatten`](Self::flatten) plus the read-only attributes. Encodings
    /// compare by bit pattern.
    pub fn flatten_full(&self) -> BTreeMap<String, String> {
        let mut m = self.flatten();
        let bits: Vec<String> = self
            .read_only
            .pattern_encoding
            .iter()
            .map(|v| format!("{:016x}", v.to_bits()))
            .collect();
        m.insert("readOnly:pattern_encoding".into(), bits.join(","));
        m.insert("readOnly:updated_at".into(), self.read_only.updated_at.to_string());
        m
    }
}

/// Matching pairs over the union of keys, as a percentage with two decimals.
pub fn flat_similarity(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> f64 {
    let union: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    if union.is_empty() {
        return 100.0;
    }
    let matching = a.iter().filter(|(k, v)| b.get(*k) == Some(*v)).count();
    (matching as f64 / union.len() as f64 * 10_000.0).round() / 100.0
}

pub fn metadata_similarity(a: &DynamicMetadata, b: &DynamicMetadata) -> f64 {
    flat_similarity(&a.flatten(), &b.flatten())
}

pub fn full_similarity(a: &DynamicMetadata, b: &DynamicMetadata) -> f64 {
    flat_similarity(&a.flatten_full(), &b.flatten_full())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: TokenId,
    pub owner: String,
    pub uri: String,
    pub created_at: u64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_token: Option<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LedgerEvent {
    /// Registers the contract identity allowed to write read-only attributes.
    Genesis { updater: String },
    Mint {
        token_id: TokenId,
        owner: String,
        uri: String,
        metadata: DynamicMetadata,
    },
    Clone {
        token_id: TokenId,
        owner: String,
        uri: String,
        provenance: Provenance,
        source_token: TokenId,
        metadata: DynamicMetadata,
    },
    UpdateWritable {
        token_id: TokenId,
        caller: String,
        traits: Vec<Trait>,
    },
    UpdateReadOnly {
        token_id: TokenId,
        caller: String,
        pattern_encoding: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: LedgerEvent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerState {
    tokens: BTreeMap<TokenId, TokenRecord>,
    metadata_store: BTreeMap<String, DynamicMetadata>,
    next_id: TokenId,
    clock: u64,
    updater: Option<String>,
    event_log: Vec<LogEntry>,
}

impl Default for LedgerState {
    fn default() -> Self {
        LedgerState {
            tokens: BTreeMap::new(),
            metadata_store: BTreeMap::new(),
            next_id: 1,
            clock: 0,
            updater: None,
            event_log: Vec::new(),
        }
    }
}

impl LedgerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty ledger whose read-only attributes can be written by `updater`.
    pub fn with_updater(updater: impl Into<String>) -> Self {
        let mut s = Self::default();
        s.commit(LedgerEvent::Genesis {
            updater: updater.into(),
        })
        .expect("genesis on empty ledger");
        s
    }

    pub fn tokens(&self) -> &BTreeMap<TokenId, TokenRecord> {
        &self.tokens
    }

    pub fn metadata_store(&self) -> &BTreeMap<String, DynamicMetadata> {
        &self.metadata_store
    }

    pub fn event_log(&self) -> &[LogEntry] {
        &self.event_log
    }

    pub fn next_id(&self) -> TokenId {
        self.next_id
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn updater(&self) -> Option<&str> {
        self.updater.as_deref()
    }

    pub fn token(&self, id: TokenId) -> Result<&TokenRecord> {
        self.tokens
            .get(&id)
            .ok_or_else(|| Error::NotFound(format!("token {id}")))
    }

    pub fn metadata_at(&self, uri: &str) -> Result<&DynamicMetadata> {
        self.metadata_store
            .get(uri)
            .ok_or_else(|| Error::NotFound(format!("uri {uri}")))
    }

    pub fn metadata(&self, id: TokenId) -> Result<&DynamicMetadata> {
        self.metadata_at(&self.token(id)?.uri)
    }

    fn token_at_uri(&self, uri: &str) -> Result<TokenId> {
        self.tokens
            .values()
            .find(|t| t.uri == uri)
            .map(|t| t.token_id)
            .ok_or_else(|| Error::NotFound(format!("uri {uri}")))
    }

    fn fresh_uri(&self) -> String {
        format!("{URI_PREFIX}{}", self.next_id)
    }

    pub fn mint(&mut self, owner: &str, metadata: DynamicMetadata) -> Result<TokenId> {
        metadata.validate()?;
        let token_id = self.next_id;
        self.commit(LedgerEvent::Mint {
            token_id,
            owner: owner.to_string(),
            uri: self.fresh_uri(),
            metadata,
        })?;
        Ok(token_id)
    }

    fn clone_from(
        &mut self,
        owner: &str,
        source_token: TokenId,
        provenance: Provenance,
        metadata: DynamicMetadata,
    ) -> Result<TokenId> {
        let token_id = self.next_id;
        self.commit(LedgerEvent::Clone {
            token_id,
            owner: owner.to_string(),
            uri: self.fresh_uri(),
            provenance,
            source_token,
            metadata,
        })?;
        Ok(token_id)
    }

    /// Copies the document at `uri` to a new locator.
    pub fn clone_by_uri(&mut self, owner: &str, uri: &str) -> Result<TokenId> {
        let source = self.token_at_uri(uri)?;
        let doc = self.metadata_at(uri)?.clone();
        self.clone_from(owner, source, Provenance::CloneByUri, doc)
    }

    /// Resolves the token's locator, then copies like [`clone_by_uri`](Self::clone_by_uri).
    pub fn clone_by_token_id(&mut self, owner: &str, token_id: TokenId) -> Result<TokenId> {
        let doc = self.metadata(token_id)?.clone();
        self.clone_from(owner, token_id, Provenance::CloneByTokenId, doc)
    }

    /// Keeps the source's fixed fields and read-only attributes and replaces
    /// the writable traits with `field_count` random pairs whose trait types
    /// do not occur in the source.
    pub fn clone_random(
        &mut self,
        owner: &str,
        source: TokenId,
        field_count: usize,
        seed: u64,
    ) -> Result<TokenId> {
        let mut doc = self.metadata(source)?.clone();
        let taken: BTreeSet<String> =
            doc.writable_attributes.iter().map(|t| t.trait_type.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traits = Vec::with_capacity(field_count);
        let mut used = BTreeSet::new();
        while traits.len() < field_count {
            let key = format!("attr_{:08x}", rng.random::<u32>());
            if taken.contains(&key) || !used.insert(key.clone()) {
                continue;
            }
            traits.push(Trait::new(key, format!("{:016x}", rng.random::<u64>())));
        }
        doc.writable_attributes = traits;
        self.clone_from(owner, source, Provenance::CloneRandom, doc)
    }

    /// Owner-only write of writable traits. Existing trait types are
    /// overwritten, new ones appended.
    pub fn update_writable(
        &mut self,
        caller: &str,
        token_id: TokenId,
        traits: Vec<Trait>,
    ) -> Result<()> {
        let token = self.token(token_id)?;
        if token.owner != caller {
            return Err(Error::Authorization(format!(
                "{caller} does not own token {token_id}"
            )));
        }
        self.commit(LedgerEvent::UpdateWritable {
            token_id,
            caller: caller.to_string(),
            traits,
        })
    }

    /// Writes `pattern_encoding` and bumps `updated_at`. Only the registered
    /// updater may call this.
    pub fn write_read_only(
        &mut self,
        caller: &str,
        token_id: TokenId,
        pattern_encoding: Vec<f64>,
    ) -> Result<()> {
        self.token(token_id)?;
        if self.updater.as_deref() != Some(caller) {
            return Err(Error::Authorization(format!(
                "{caller} may not write read-only attributes"
            )));
        }
        self.commit(LedgerEvent::UpdateReadOnly {
            token_id,
            caller: caller.to_string(),
            pattern_encoding,
        })
    }

    /// Static-field similarity between two tokens' documents.
    pub fn similarity(&self, a: TokenId, b: TokenId) -> Result<f64> {
        Ok(metadata_similarity(self.metadata(a)?, self.metadata(b)?))
    }

    /// Similarity including read-only attributes.
    pub fn full_similarity(&self, a: TokenId, b: TokenId) -> Result<f64> {
        Ok(full_similarity(self.metadata(a)?, self.metadata(b)?))
    }

    /// Validates `event` against the current state, applies it and appends
    /// it to the log. State is untouched on error.
    fn commit(&mut self, event: LedgerEvent) -> Result<()> {
        self.apply(&event)?;
        self.clock += 1;
        self.event_log.push(LogEntry {
            timestamp: self.clock,
            event,
        });
        Ok(())
    }

    fn apply(&mut self, event: &LedgerEvent) -> Result<()> {
        let created_at = self.clock + 1;
        match event {
            LedgerEvent::Genesis { updater } => {
                if self.updater.is_some() || !self.event_log.is_empty() {
                    return Err(Error::State("genesis must be the first event".into()));
                }
                self.updater = Some(updater.clone());
            }
            LedgerEvent::Mint {
                token_id,
                owner,
                uri,
                metadata,
            } => {
                self.check_new(*token_id, uri)?;
                metadata.validate()?;
                self.insert(TokenRecord {
                    token_id: *token_id,
                    owner: owner.clone(),
                    uri: uri.clone(),
                    created_at,
                    provenance: Provenance::Mint,
                    source_token: None,
                }, metadata.clone());
            }
            LedgerEvent::Clone {
                token_id,
                owner,
                uri,
                provenance,
                source_token,
                metadata,
            } => {
                if *provenance == Provenance::Mint {
                    return Err(Error::State("clone event with mint provenance".into()));
                }
                self.token(*source_token)?;
                self.check_new(*token_id, uri)?;
                metadata.validate()?;
                self.insert(TokenRecord {
                    token_id: *token_id,
                    owner: owner.clone(),
                    uri: uri.clone(),
                    created_at,
                    provenance: *provenance,
                    source_token: Some(*source_token),
                }, metadata.clone());
            }
            LedgerEvent::UpdateWritable {
                token_id,
                caller,
                traits,
            } => {
                let token = self.token(*token_id)?;
                if &token.owner != caller {
                    return Err(Error::Authorization(format!(
                        "{caller} does not own token {token_id}"
                    )));
                }
                let uri = token.uri.clone();
                let mut doc = self.metadata_at(&uri)?.clone();
                for t in traits {
                    match doc
                        .writable_attributes
                        .iter_mut()
                        .find(|x| x.trait_type == t.trait_type)
                    {
                        Some(x) => x.value = t.value.clone(),
                        None => doc.writable_attributes.push(t.clone()),
                    }
                }
                doc.validate()?;
                self.metadata_store.insert(uri, doc);
            }
            LedgerEvent::UpdateReadOnly {
                token_id,
                caller,
                pattern_encoding,
            } => {
                if self.updater.as_deref() != Some(caller.as_str()) {
                    return Err(Error::Authorization(format!(
                        "{caller} may not write read-only attributes"
                    )));
                }
                let uri = self.token(*token_id)?.uri.clone();
                let mut doc = self.metadata_at(&uri)?.clone();
                doc.read_only.pattern_encoding = pattern_encoding.clone();
                doc.read_only.updated_at += 1;
                if pattern_encoding.len() != ENCODING_LEN {
                    return Err(Error::Validation(format!(
                        "pattern_encoding must have {ENCODING_LEN} values, got {}",
                        pattern_encoding.len()
                    )));
                }
                doc.validate()?;
                self.metadata_store.insert(uri, doc);
            }
        }
        Ok(())
    }

    fn check_new(&self, token_id: TokenId, uri: &str) -> Result<()> {
        if token_id != self.next_id {
            return Err(Error::State(format!(
                "expected token id {}, got {token_id}",
                self.next_id
            )));
        }
        if self.metadata_store.contains_key(uri) {
            return Err(Error::State(format!("uri {uri} already in use")));
        }
        Ok(())
    }

    fn insert(&mut self, record: TokenRecord, metadata: DynamicMetadata) {
        self.next_id = record.token_id + 1;
        self.metadata_store.insert(record.uri.clone(), metadata);
        self.tokens.insert(record.token_id, record);
    }

    /// Rebuilds state by re-applying every event in order.
    pub fn replay(log: &[LogEntry]) -> Result<Self> {
        let mut s = Self::default();
        for (i, entry) in log.iter().enumerate() {
            if entry.timestamp != s.clock + 1 {
                return Err(Error::format(
                    "ledger log",
                    format!("entry {i} has timestamp {}, expected {}", entry.timestamp, s.clock + 1),
                ));
            }
            s.commit(entry.event.clone()).map_err(|e| {
                Error::format("ledger log", format!("entry {i} cannot be applied: {e}"))
            })?;
        }
        Ok(s)
    }

    pub fn log_to_json(&self) -> String {
        serde_json::to_string_pretty(&self.event_log).expect("log serializes")
    }

    pub fn from_log_json(text: &str) -> Result<Self> {
        let log: Vec<LogEntry> = serde_json::from_str(text)?;
        Self::replay(&log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.log_to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_log_json(&std::fs::read_to_string(path)?)
    }
}
