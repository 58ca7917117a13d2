//! Spam statistics, cluster spam probabilities, spam rank and the final
//! three-way decision.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clustering::{Cluster, ClusterState, Placement, SideKind, SideState, UserId};
use crate::error::{Error, Result};
use crate::ingest::{Label, MessageRecord};

/// Running per-user counts of spam and total messages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpamStats {
    pub spam_count: u64,
    pub total_count: u64,
}

impl SpamStats {
    pub fn record(&mut self, label: Label) {
        self.total_count += 1;
        if label.is_spam() {
            self.spam_count += 1;
        }
    }

    /// `None` until the user has been seen at least once.
    pub fn frequency(&self) -> Option<f64> {
        (self.total_count > 0).then(|| self.spam_count as f64 / self.total_count as f64)
    }
}

/// Incrementally maintained aggregate of member frequencies: their sum and
/// the number of members that have at least one observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub frequency_sum: f64,
    pub observed_members: u32,
}

/// Probability assigned to a cluster none of whose members has history.
pub const COLD_START_PROBABILITY: f64 = 0.5;

impl ClusterStats {
    pub fn add(&mut self, stats: &SpamStats) {
        if let Some(f) = stats.frequency() {
            self.frequency_sum += f;
            self.observed_members += 1;
        }
    }

    pub fn remove(&mut self, stats: &SpamStats) {
        if let Some(f) = stats.frequency() {
            self.frequency_sum -= f;
            self.observed_members -= 1;
            if self.observed_members == 0 {
                self.frequency_sum = 0.0;
            }
        }
    }

    pub fn replace(&mut self, old: &SpamStats, new: &SpamStats) {
        self.remove(old);
        self.add(new);
    }

    pub fn probability(&self) -> f64 {
        if self.observed_members == 0 {
            return COLD_START_PROBABILITY;
        }
        (self.frequency_sum / self.observed_members as f64).clamp(0.0, 1.0)
    }

    pub fn approx_eq(&self, other: &ClusterStats, tol: f64) -> bool {
        self.observed_members == other.observed_members && (self.frequency_sum - other.frequency_sum).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub omega: f64,
    /// Read cluster probabilities before this message's label is recorded.
    /// The default records first, exactly as the per-message loop does.
    pub score_before_update: bool,
}

impl ScoringConfig {
    pub fn new(omega: f64) -> Result<Self> {
        let config = Self { omega, score_before_update: false };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega must lie in [0.5, 1], got {}", self.omega)));
        }
        Ok(())
    }
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { omega: 0.85, score_before_update: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "spam")]
    Spam,
    #[serde(rename = "legit")]
    Legitimate,
    #[serde(rename = "deferred")]
    Deferred,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Spam => "spam",
            Decision::Legitimate => "legit",
            Decision::Deferred => "deferred",
        }
    }

    /// The label this decision asserts, if it asserts one.
    pub fn label(self) -> Option<Label> {
        match self {
            Decision::Spam => Some(Label::Spam),
            Decision::Legitimate => Some(Label::Ham),
            Decision::Deferred => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(rename = "id")]
    pub msg_id: String,
    pub p_s: f64,
    pub p_r: f64,
    #[serde(rename = "sr")]
    pub spam_rank: f64,
    pub decision: Decision,
    #[serde(rename = "aux")]
    pub aux_label: Label,
    #[serde(rename = "effective")]
    pub effective_label: Label,
}

impl Verdict {
    pub fn classified(&self) -> bool {
        self.decision != Decision::Deferred
    }
}

/// Length of the projection of `(p_s, p_r) / √2` onto the unit diagonal of
/// the probability square, which reduces to the mean of the two.
pub fn spam_rank(p_s: f64, p_r: f64) -> Result<f64> {
    for p in [p_s, p_r] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(p));
        }
    }
    Ok(0.5 * (p_s + p_r))
}

/// `Spam` above `omega`, `Legitimate` below `1 - omega`, otherwise
/// `Deferred` (the band is closed).
pub fn decide(spam_rank: f64, omega: f64) -> Decision {
    if spam_rank > omega {
        Decision::Spam
    } else if spam_rank < 1.0 - omega {
        Decision::Legitimate
    } else {
        Decision::Deferred
    }
}

pub fn verdict_from_rank(msg_id: &str, p_s: f64, p_r: f64, spam_rank: f64, aux_label: Label, omega: f64) -> Verdict {
    let decision = decide(spam_rank, omega);
    Verdict {
        msg_id: msg_id.to_owned(),
        p_s,
        p_r,
        spam_rank,
        decision,
        aux_label,
        effective_label: decision.label().unwrap_or(aux_label),
    }
}

/// Records one observation for a user and keeps its cluster's cache in step.
pub fn update_user_stats(side: &mut SideState, user: UserId, label: Label) -> Result<SpamStats> {
    let state = side.user_mut(user)?;
    let old = state.stats;
    state.stats.record(label);
    let new = state.stats;
    if let Some(cid) = state.cluster {
        side.cluster_mut(cid)
            .ok_or_else(|| Error::InternalState(format!("user {user} points at missing {cid}")))?
            .stats
            .replace(&old, &new);
    }
    Ok(new)
}

/// Unweighted mean of member spam frequencies, recomputed from the members.
/// Members without history are left out; a cluster with no history at all
/// gets [`COLD_START_PROBABILITY`].
pub fn cluster_spam_probability(cluster: &Cluster, side: &SideState) -> Result<f64> {
    if cluster.members.is_empty() {
        return Err(Error::InternalState(format!("{} has no members", cluster.id)));
    }
    let mut sum = 0.0;
    let mut n = 0u32;
    for &m in &cluster.members {
        if let Some(f) = side.user(m)?.stats.frequency() {
            sum += f;
            n += 1;
        }
    }
    Ok(if n == 0 { COLD_START_PROBABILITY } else { sum / n as f64 })
}

fn cached_probability(side: &SideState, user: UserId) -> Result<f64> {
    let cid = side.user(user)?.cluster.ok_or_else(|| Error::InternalState(format!("user {user} has no cluster")))?;
    side.cluster(cid).map(|c| c.stats.probability()).ok_or_else(|| Error::InternalState(format!("missing {cid}")))
}

/// Scores a message whose users have already been placed by
/// [`ClusterState::process_message_structure`].
pub fn classify_message(
    state: &mut ClusterState,
    placement: &Placement,
    record: &MessageRecord,
    config: &ScoringConfig,
) -> Result<Verdict> {
    let label = record.aux_label;
    let (p_s, p_r_sum) = if config.score_before_update {
        let p_s = cached_probability(&state.sender_side, placement.sender)?;
        let mut sum = 0.0;
        for &r in &placement.recipients {
            sum += cached_probability(&state.recipient_side, r)?;
        }
        update_user_stats(&mut state.sender_side, placement.sender, label)?;
        for &r in &placement.recipients {
            update_user_stats(&mut state.recipient_side, r, label)?;
        }
        (p_s, sum)
    } else {
        update_user_stats(&mut state.sender_side, placement.sender, label)?;
        let p_s = cached_probability(&state.sender_side, placement.sender)?;
        let mut sum = 0.0;
        for &r in &placement.recipients {
            update_user_stats(&mut state.recipient_side, r, label)?;
            sum += cached_probability(&state.recipient_side, r)?;
        }
        (p_s, sum)
    };
    let p_r = (p_r_sum / placement.recipients.len() as f64).clamp(0.0, 1.0);
    let rank = spam_rank(p_s, p_r)?;
    Ok(verdict_from_rank(&record.msg_id, p_s, p_r, rank, label, config.omega))
}

/// Total observations recorded on one side.
pub fn total_observations(state: &ClusterState, kind: SideKind) -> u64 {
    state.side(kind).users().iter().map(|u| u.stats.total_count).sum()
}
