//! Dynamic sender and recipient clusters.
//!
//! Each side (senders, recipients) owns its users, its clusters and an
//! inverted index over the opposite side's identities. Whenever a user is
//! touched by a message it is placed in the most similar cluster, judged
//! with its own vector removed from its current cluster, provided the
//! cosine strictly exceeds `tau`; otherwise it seeds a new single-user
//! cluster. Ties go to the lowest cluster id. Cluster ids are never reused.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MessageRecord;
use crate::scoring::{ClusterStats, SpamStats};
use crate::vectorspace::{
    add_member_vector, compare_similarity, cosine_from_parts, remove_member_vector, without_member, ClusterVector,
    DimId, DotScratch, Interner, InvertedIndex, SparseView, UserVector,
};

pub type UserId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideKind {
    Sender,
    Recipient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub tau: f64,
    /// Assign users before adding the current message's edges to their
    /// vectors. The default adds edges first.
    pub assign_before_update: bool,
}

impl ClusteringConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let config = Self { tau, assign_before_update: false };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { tau: 0.5, assign_before_update: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub kind: SideKind,
    pub members: BTreeSet<UserId>,
    pub vector: ClusterVector,
    pub stats: ClusterStats,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UserState {
    pub vector: UserVector,
    pub stats: SpamStats,
    pub cluster: Option<ClusterId>,
}

/// One similarity evaluation made while reassigning a user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub side: SideKind,
    pub user: UserId,
    pub cluster: ClusterId,
    /// Cluster the user belonged to when reassignment started.
    pub previous_cluster: Option<ClusterId>,
    pub dot: u64,
    pub cluster_norm_sq: u64,
    pub similarity: f64,
    /// Whether the compared cluster lists the user as a member.
    pub user_in_cluster: bool,
    /// Whether `dot` and `cluster_norm_sq` had the user's own vector
    /// subtracted.
    pub self_removed: bool,
}

/// Observer for every similarity comparison; used to instrument replays.
pub trait SimilarityProbe: Send {
    fn on_comparison(&mut self, side: &SideState, event: &Comparison);
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub num_clusters: usize,
    /// cluster size → number of clusters of that size
    pub size_histogram: BTreeMap<usize, usize>,
    pub num_singletons: usize,
}

impl Census {
    pub fn num_users(&self) -> usize {
        self.size_histogram.iter().map(|(size, n)| size * n).sum()
    }
}

/// Users, clusters and index of one side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideState {
    kind: SideKind,
    users: Vec<UserState>,
    #[serde(with = "cluster_list")]
    clusters: FxHashMap<ClusterId, Cluster>,
    next_cluster_id: u64,
    #[serde(skip)]
    index: InvertedIndex,
    #[serde(skip)]
    scratch: DotScratch,
    #[serde(skip)]
    touched: Vec<ClusterId>,
}

/// Clusters are stored as a list sorted by id.
mod cluster_list {
    use super::{Cluster, ClusterId};
    use rustc_hash::FxHashMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &FxHashMap<ClusterId, Cluster>, s: S) -> Result<S::Ok, S::Error> {
        let mut list: Vec<&Cluster> = map.values().collect();
        list.sort_unstable_by_key(|c| c.id);
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FxHashMap<ClusterId, Cluster>, D::Error> {
        let list = Vec::<Cluster>::deserialize(d)?;
        let n = list.len();
        let map: FxHashMap<_, _> = list.into_iter().map(|c| (c.id, c)).collect();
        if map.len() != n {
            return Err(serde::de::Error::custom("duplicate cluster id"));
        }
        Ok(map)
    }
}

impl SideState {
    pub fn new(kind: SideKind) -> Self {
        Self {
            kind,
            users: Vec::new(),
            clusters: FxHashMap::default(),
            next_cluster_id: 0,
            index: InvertedIndex::new(),
            scratch: DotScratch::default(),
            touched: Vec::new(),
        }
    }

    pub fn kind(&self) -> SideKind {
        self.kind
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    pub fn user(&self, id: UserId) -> Result<&UserState> {
        self.users.get(id as usize).ok_or(Error::UnknownUser(id))
    }

    pub(crate) fn user_mut(&mut self, id: UserId) -> Result<&mut UserState> {
        self.users.get_mut(id as usize).ok_or(Error::UnknownUser(id))
    }

    /// Clusters in ascending id order.
    pub fn clusters(&self) -> impl Iterator<Item = &Cluster> {
        let mut list: Vec<&Cluster> = self.clusters.values().collect();
        list.sort_unstable_by_key(|c| c.id);
        list.into_iter()
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters.get(&id)
    }

    pub(crate) fn cluster_mut(&mut self, id: ClusterId) -> Option<&mut Cluster> {
        self.clusters.get_mut(&id)
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Makes `id` a known user; ids are dense and assigned by interning.
    pub fn ensure_user(&mut self, id: UserId) {
        let i = id as usize;
        if i >= self.users.len() {
            self.users.resize_with(i + 1, UserState::default);
        }
    }

    /// Adds a contact to a user's vector, keeping its current cluster sum
    /// and the index in step. Returns `true` if the contact is new.
    pub fn add_contact(&mut self, user: UserId, dim: DimId) -> Result<bool> {
        let state = self.users.get_mut(user as usize).ok_or(Error::UnknownUser(user))?;
        if !state.vector.insert(dim) {
            return Ok(false);
        }
        if let Some(cid) = state.cluster {
            let cluster = self
                .clusters
                .get_mut(&cid)
                .ok_or_else(|| Error::InternalState(format!("user {user} points at missing {cid}")))?;
            cluster.vector.increment(dim);
            self.index.increment(dim, cid);
        }
        Ok(true)
    }

    /// Reassigns `user` to its most similar cluster, or seeds a new one.
    ///
    /// The current cluster is scored with the user's own contribution
    /// subtracted, which gives the same similarities as detaching first. A
    /// user that stays put is left untouched; otherwise it is detached
    /// (destroying an emptied cluster) and attached to the target.
    pub fn assign_user(
        &mut self,
        user: UserId,
        tau: f64,
        mut probe: Option<&mut (dyn SimilarityProbe + '_)>,
    ) -> Result<ClusterId> {
        let previous = self.user(user)?.cluster;
        let mut touched = std::mem::take(&mut self.touched);
        touched.clear();
        let user_vec = &self.users[user as usize].vector;
        let n = user_vec.norm_sq();
        self.index.accumulate_dots(user_vec, &mut self.scratch, &mut touched);

        let mut best: Option<(ClusterId, u64, u64)> = None;
        for &cid in &touched {
            let cluster = self
                .clusters
                .get(&cid)
                .ok_or_else(|| Error::InternalState(format!("index points at missing {cid}")))?;
            let (mut dot, mut norm_sq) = (self.scratch.get(cid), cluster.vector.norm_sq());
            let self_removed = previous == Some(cid);
            if self_removed {
                (dot, norm_sq) = without_member(dot, norm_sq, n);
            }
            if let Some(p) = probe.as_deref_mut() {
                let event = Comparison {
                    side: self.kind,
                    user,
                    cluster: cid,
                    previous_cluster: previous,
                    dot,
                    cluster_norm_sq: norm_sq,
                    similarity: cosine_from_parts(dot, norm_sq, n),
                    user_in_cluster: cluster.members.contains(&user),
                    self_removed,
                };
                p.on_comparison(self, &event);
            }
            if dot == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bid, bdot, bnorm)) => match compare_similarity(dot, norm_sq, bdot, bnorm) {
                    Ordering::Greater => true,
                    Ordering::Equal => cid < bid,
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((cid, dot, norm_sq));
            }
        }
        self.scratch.clear(&touched);
        self.touched = touched;

        let joined = match best {
            Some((cid, dot, norm_sq)) if cosine_from_parts(dot, norm_sq, n) > tau => Some(cid),
            _ => None,
        };
        if let Some(cid) = joined.filter(|&c| Some(c) == previous) {
            return Ok(cid);
        }
        if let Some(cid) = previous {
            self.detach(user, cid)?;
        }
        let target = match joined {
            Some(cid) => cid,
            None => self.create_cluster(),
        };
        self.attach(user, target)?;
        Ok(target)
    }

    fn create_cluster(&mut self) -> ClusterId {
        let id = ClusterId(self.next_cluster_id);
        self.next_cluster_id += 1;
        self.clusters.insert(
            id,
            Cluster {
                id,
                kind: self.kind,
                members: BTreeSet::new(),
                vector: ClusterVector::new(),
                stats: ClusterStats::default(),
            },
        );
        id
    }

    fn attach(&mut self, user: UserId, cid: ClusterId) -> Result<()> {
        let state = &mut self.users[user as usize];
        let cluster =
            self.clusters.get_mut(&cid).ok_or_else(|| Error::InternalState(format!("attach to missing {cid}")))?;
        cluster.members.insert(user);
        add_member_vector(cid, &mut cluster.vector, &state.vector, &mut self.index);
        cluster.stats.add(&state.stats);
        state.cluster = Some(cid);
        Ok(())
    }

    /// Removes a member and destroys its cluster if that leaves it empty.
    fn detach(&mut self, user: UserId, cid: ClusterId) -> Result<()> {
        let state = &mut self.users[user as usize];
        let cluster =
            self.clusters.get_mut(&cid).ok_or_else(|| Error::InternalState(format!("detach from missing {cid}")))?;
        if !cluster.members.remove(&user) {
            return Err(Error::NotAMember { user, cluster: cid.0 });
        }
        remove_member_vector(cid, &mut cluster.vector, &state.vector, &mut self.index)?;
        cluster.stats.remove(&state.stats);
        state.cluster = None;
        if cluster.members.is_empty() {
            if !cluster.vector.is_empty() {
                return Err(Error::InternalState(format!("{cid} emptied with non-zero sum")));
            }
            self.clusters.remove(&cid);
        }
        Ok(())
    }

    pub fn census(&self) -> Census {
        let mut census = Census { num_clusters: self.clusters.len(), ..Census::default() };
        for c in self.clusters.values() {
            *census.size_histogram.entry(c.len()).or_insert(0) += 1;
            if c.len() == 1 {
                census.num_singletons += 1;
            }
        }
        census
    }

    /// Rebuilds the inverted index from cluster vectors, e.g. after loading
    /// a snapshot.
    pub fn rebuild_index(&mut self) {
        let mut index = InvertedIndex::new();
        for c in self.clusters.values() {
            for (d, n) in c.vector.sorted_entries() {
                for _ in 0..n {
                    index.increment(d, c.id);
                }
            }
        }
        self.index = index;
    }

    /// Full recomputation of every cached quantity.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InternalState(format!("{:?} side: {msg}", self.kind)));
        let mut seen = BTreeSet::new();
        let mut expected_postings = Vec::new();
        for c in self.clusters.values() {
            if c.members.is_empty() {
                return fail(format!("{} is empty", c.id));
            }
            if c.kind != self.kind {
                return fail(format!("{} has wrong kind", c.id));
            }
            let mut sum = ClusterVector::new();
            let mut stats = ClusterStats::default();
            for &m in &c.members {
                if !seen.insert(m) {
                    return fail(format!("user {m} in two clusters"));
                }
                let u = self.user(m)?;
                if u.cluster != Some(c.id) {
                    return fail(format!("user {m} does not point back at {}", c.id));
                }
                for &d in u.vector.dims() {
                    sum.increment(d);
                }
                stats.add(&u.stats);
            }
            if sum.sorted_entries() != c.vector.sorted_entries() {
                return fail(format!("{} sum differs from its members", c.id));
            }
            if c.vector.norm_sq() != c.vector.recompute_norm_sq() {
                return fail(format!("{} cached norm is stale", c.id));
            }
            if !stats.approx_eq(&c.stats, 1e-9) {
                return fail(format!("{} stats cache drifted", c.id));
            }
            for (d, n) in c.vector.sorted_entries() {
                expected_postings.push((d, c.id, n));
            }
        }
        for (id, u) in self.users.iter().enumerate() {
            if u.cluster.is_some() != seen.contains(&(id as UserId)) {
                return fail(format!("user {id} membership mismatch"));
            }
        }
        expected_postings.sort_unstable();
        if expected_postings != self.index.sorted_postings() {
            return fail("inverted index out of sync".into());
        }
        Ok(())
    }
}

/// Interning tables plus both sides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterState {
    pub senders: Interner,
    pub recipients: Interner,
    pub sender_side: SideState,
    pub recipient_side: SideState,
}

/// Where a message's users ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub sender: UserId,
    pub sender_cluster: ClusterId,
    /// De-duplicated, in message order.
    pub recipients: Vec<UserId>,
    pub recipient_clusters: Vec<ClusterId>,
}

impl Default for ClusterState {
    fn default() -> Self {
        Self::new()
    }
}

impl ClusterState {
    pub fn new() -> Self {
        Self {
            senders: Interner::default(),
            recipients: Interner::default(),
            sender_side: SideState::new(SideKind::Sender),
            recipient_side: SideState::new(SideKind::Recipient),
        }
    }

    pub fn side(&self, kind: SideKind) -> &SideState {
        match kind {
            SideKind::Sender => &self.sender_side,
            SideKind::Recipient => &self.recipient_side,
        }
    }

    pub fn side_mut(&mut self, kind: SideKind) -> &mut SideState {
        match kind {
            SideKind::Sender => &mut self.sender_side,
            SideKind::Recipient => &mut self.recipient_side,
        }
    }

    /// Updates contact vectors with the message's edges and reassigns the
    /// sender, then every recipient in listed order.
    pub fn process_message_structure(
        &mut self,
        record: &MessageRecord,
        config: &ClusteringConfig,
        probe: Option<&mut (dyn SimilarityProbe + '_)>,
    ) -> Result<Placement> {
        if record.recipients.is_empty() {
            return Err(Error::Format(format!("message {} has no recipients", record.msg_id)));
        }
        let sender = self.senders.intern(&record.sender);
        self.sender_side.ensure_user(sender);
        let mut recipients = Vec::with_capacity(record.recipients.len());
        for r in &record.recipients {
            let id = self.recipients.intern(r);
            if !recipients.contains(&id) {
                self.recipient_side.ensure_user(id);
                recipients.push(id);
            }
        }
        if config.assign_before_update {
            self.assign_all(sender, &recipients, config.tau, probe)?;
            self.add_edges(sender, &recipients)?;
        } else {
            self.add_edges(sender, &recipients)?;
            self.assign_all(sender, &recipients, config.tau, probe)?;
        }
        let sender_cluster = self.sender_side.user(sender)?.cluster.ok_or_else(unplaced)?;
        let recipient_clusters = recipients
            .iter()
            .map(|&r| self.recipient_side.user(r)?.cluster.ok_or_else(unplaced))
            .collect::<Result<Vec<_>>>()?;
        Ok(Placement { sender, sender_cluster, recipients, recipient_clusters })
    }

    fn add_edges(&mut self, sender: UserId, recipients: &[UserId]) -> Result<()> {
        for &r in recipients {
            self.sender_side.add_contact(sender, r)?;
            self.recipient_side.add_contact(r, sender)?;
        }
        Ok(())
    }

    fn assign_all(
        &mut self,
        sender: UserId,
        recipients: &[UserId],
        tau: f64,
        mut probe: Option<&mut (dyn SimilarityProbe + '_)>,
    ) -> Result<()> {
        self.sender_side.assign_user(sender, tau, probe.as_deref_mut())?;
        for &r in recipients {
            self.recipient_side.assign_user(r, tau, probe.as_deref_mut())?;
        }
        Ok(())
    }

    pub fn cluster_census(&self, kind: SideKind) -> Census {
        self.side(kind).census()
    }

    pub fn validate(&self) -> Result<()> {
        self.sender_side.validate()?;
        self.recipient_side.validate()
    }

    pub fn rebuild_indexes(&mut self) {
        self.sender_side.rebuild_index();
        self.recipient_side.rebuild_index();
    }
}

fn unplaced() -> Error {
    Error::InternalState("user left without a cluster".into())
}
