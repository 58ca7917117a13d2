//! The per-message state machine: place users, then score.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{ClusterState, ClusteringConfig, Placement, SimilarityProbe};
use crate::error::Result;
use crate::ingest::{MessageRecord, SenderIdentity};
use crate::scoring::{classify_message, ScoringConfig, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub tau: f64,
    pub omega: f64,
    pub sender_identity: SenderIdentity,
    pub assign_before_update: bool,
    pub score_before_update: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            omega: 0.85,
            sender_identity: SenderIdentity::Domain,
            assign_before_update: false,
            score_before_update: false,
        }
    }
}

impl EngineConfig {
    pub fn with_params(tau: f64, omega: f64) -> Self {
        Self { tau, omega, ..Self::default() }
    }

    pub fn clustering(&self) -> ClusteringConfig {
        ClusteringConfig { tau: self.tau, assign_before_update: self.assign_before_update }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig { omega: self.omega, score_before_update: self.score_before_update }
    }

    pub fn validate(&self) -> Result<()> {
        self.clustering().validate()?;
        self.scoring().validate()
    }

    /// Short stable hash of the configuration, printed in report headers
    /// and stored in snapshots.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        fingerprint_of(canonical.as_bytes())
    }
}

/// First 8 bytes of the SHA-256 of `bytes`, as hex.
pub fn fingerprint_of(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Engine {
    config: EngineConfig,
    state: ClusterState,
    messages: u64,
    probe: Option<Box<dyn SimilarityProbe>>,
    validate_each: bool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).field("messages", &self.messages).finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::from_parts(config, ClusterState::new(), 0))
    }

    pub(crate) fn from_parts(config: EngineConfig, state: ClusterState, messages: u64) -> Self {
        Self { config, state, messages, probe: None, validate_each: false }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn messages_processed(&self) -> u64 {
        self.messages
    }

    /// Installs an observer called on every similarity comparison.
    pub fn set_probe(&mut self, probe: Box<dyn SimilarityProbe>) {
        self.probe = Some(probe);
    }

    pub fn take_probe(&mut self) -> Option<Box<dyn SimilarityProbe>> {
        self.probe.take()
    }

    /// Revalidate every cached quantity after each message. Slow; for tests.
    pub fn set_validate_each(&mut self, on: bool) {
        self.validate_each = on;
    }

    pub fn process(&mut self, record: &MessageRecord) -> Result<Verdict> {
        Ok(self.process_detailed(record)?.1)
    }

    pub fn process_detailed(&mut self, record: &MessageRecord) -> Result<(Placement, Verdict)> {
        let placement =
            self.state.process_message_structure(record, &self.config.clustering(), self.probe.as_deref_mut())?;
        let verdict = classify_message(&mut self.state, &placement, record, &self.config.scoring())?;
        self.messages += 1;
        if self.validate_each {
            self.state.validate()?;
        }
        Ok((placement, verdict))
    }

    pub fn run<'a>(&mut self, records: impl IntoIterator<Item = &'a MessageRecord>) -> Result<Vec<Verdict>> {
        records.into_iter().map(|r| self.process(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.state.validate()
    }

    pub(crate) fn parts(&self) -> (&EngineConfig, &ClusterState, u64) {
        (&self.config, &self.state, self.messages)
    }
}

/// Runs a fresh engine over `records`.
pub fn replay(config: EngineConfig, records: &[MessageRecord]) -> Result<(Engine, Vec<Verdict>)> {
    let mut engine = Engine::new(config)?;
    let verdicts = engine.run(records)?;
    Ok((engine, verdicts))
}
