//! Binary contact vectors, cluster sum vectors and the dimension-to-cluster
//! inverted index.
//!
//! Identities are interned to dense `u32` ids. A sender's dimensions are
//! recipient ids and a recipient's dimensions are sender ids, so the index
//! of one side is addressed by the user ids of the other side.
//!
//! Cluster vectors keep integer member counts per dimension. Removing a
//! member is then an exact subtraction, and all dot products and squared
//! norms are integers; only the final cosine is a float.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterId;
use crate::error::{Error, Result};

pub type DimId = u32;

/// Bidirectional string table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    ids: FxHashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl From<Vec<String>> for Interner {
    fn from(names: Vec<String>) -> Self {
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        Self { ids, names }
    }
}

impl From<Interner> for Vec<String> {
    fn from(interner: Interner) -> Self {
        interner.names
    }
}

/// Anything that can be viewed as a non-negative sparse vector.
pub trait SparseView {
    fn weight(&self, dim: DimId) -> u64;
    fn entries(&self) -> Box<dyn Iterator<Item = (DimId, u64)> + '_>;
    fn nnz(&self) -> usize;
    fn norm_sq(&self) -> u64;
}

/// Contact set of one user. Entries are binary, so the vector is a sorted
/// set of dimension ids and `|v|² = |dims|`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserVector {
    dims: Vec<DimId>,
}

impl UserVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dims(dims: impl IntoIterator<Item = DimId>) -> Self {
        let mut v = Self::new();
        for d in dims {
            v.insert(d);
        }
        v
    }

    /// Returns `true` when the dimension was not present before.
    pub fn insert(&mut self, dim: DimId) -> bool {
        match self.dims.binary_search(&dim) {
            Ok(_) => false,
            Err(pos) => {
                self.dims.insert(pos, dim);
                true
            }
        }
    }

    pub fn contains(&self, dim: DimId) -> bool {
        self.dims.binary_search(&dim).is_ok()
    }

    pub fn dims(&self) -> &[DimId] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn norm(&self) -> f64 {
        (self.dims.len() as f64).sqrt()
    }
}

impl SparseView for UserVector {
    fn weight(&self, dim: DimId) -> u64 {
        self.contains(dim) as u64
    }

    fn entries(&self) -> Box<dyn Iterator<Item = (DimId, u64)> + '_> {
        Box::new(self.dims.iter().map(|&d| (d, 1)))
    }

    fn nnz(&self) -> usize {
        self.dims.len()
    }

    fn norm_sq(&self) -> u64 {
        self.dims.len() as u64
    }
}

/// Sum of the member vectors of a cluster. `entries[d]` is the number of
/// members whose contact list contains `d`; zero counts are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<DimId, u32>", into = "BTreeMap<DimId, u32>")]
pub struct ClusterVector {
    entries: FxHashMap<DimId, u32>,
    norm_sq: u64,
}

impl ClusterVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dim: DimId) -> u32 {
        self.entries.get(&dim).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending dimension order.
    pub fn sorted_entries(&self) -> Vec<(DimId, u32)> {
        let mut v: Vec<_> = self.entries.iter().map(|(&d, &c)| (d, c)).collect();
        v.sort_unstable();
        v
    }

    /// Increments `dim`; returns `true` on a 0 → 1 transition.
    pub fn increment(&mut self, dim: DimId) -> bool {
        let c = self.entries.entry(dim).or_insert(0);
        // (c+1)² - c² = 2c + 1
        self.norm_sq += 2 * *c as u64 + 1;
        *c += 1;
        *c == 1
    }

    /// Decrements `dim`; returns `true` on a 1 → 0 transition.
    pub fn decrement(&mut self, dim: DimId) -> Result<bool> {
        let Some(c) = self.entries.get_mut(&dim) else {
            return Err(Error::InternalState(format!("negative count on dimension {dim}")));
        };
        *c -= 1;
        self.norm_sq -= 2 * *c as u64 + 1;
        if *c == 0 {
            self.entries.remove(&dim);
            return Ok(true);
        }
        Ok(false)
    }

    /// `Σ_d self[d] · user[d]` for a binary user vector.
    pub fn dot_user(&self, user: &UserVector) -> u64 {
        user.dims.iter().map(|&d| self.get(d) as u64).sum()
    }

    /// Recomputed squared norm; the cached value must always agree.
    pub fn recompute_norm_sq(&self) -> u64 {
        self.entries.values().map(|&c| (c as u64) * (c as u64)).sum()
    }
}

impl SparseView for ClusterVector {
    fn weight(&self, dim: DimId) -> u64 {
        self.get(dim) as u64
    }

    fn entries(&self) -> Box<dyn Iterator<Item = (DimId, u64)> + '_> {
        Box::new(self.entries.iter().map(|(&d, &c)| (d, c as u64)))
    }

    fn nnz(&self) -> usize {
        self.entries.len()
    }

    fn norm_sq(&self) -> u64 {
        self.norm_sq
    }
}

impl From<BTreeMap<DimId, u32>> for ClusterVector {
    fn from(map: BTreeMap<DimId, u32>) -> Self {
        let entries: FxHashMap<_, _> = map.into_iter().filter(|&(_, c)| c > 0).collect();
        let norm_sq = entries.values().map(|&c| (c as u64) * (c as u64)).sum();
        Self { entries, norm_sq }
    }
}

impl From<ClusterVector> for BTreeMap<DimId, u32> {
    fn from(v: ClusterVector) -> Self {
        v.entries.into_iter().collect()
    }
}

/// Cosine from integer parts. Zero vectors have similarity 0 with
/// everything; the result is clamped to `[0, 1]`.
pub fn cosine_from_parts(dot: u64, norm_sq_a: u64, norm_sq_b: u64) -> f64 {
    if dot == 0 || norm_sq_a == 0 || norm_sq_b == 0 {
        return 0.0;
    }
    let denom = ((norm_sq_a as f64) * (norm_sq_b as f64)).sqrt();
    (dot as f64 / denom).clamp(0.0, 1.0)
}

pub fn cosine<A: SparseView + ?Sized, B: SparseView + ?Sized>(a: &A, b: &B) -> f64 {
    let dot: u64 = if a.nnz() <= b.nnz() {
        a.entries().map(|(d, w)| w * b.weight(d)).sum()
    } else {
        b.entries().map(|(d, w)| w * a.weight(d)).sum()
    };
    cosine_from_parts(dot, a.norm_sq(), b.norm_sq())
}

/// Ordering of two cosines that share the same user vector, compared
/// exactly: `dot_a² · |b|² ⋚ dot_b² · |a|²`.
pub fn compare_similarity(dot_a: u64, norm_sq_a: u64, dot_b: u64, norm_sq_b: u64) -> std::cmp::Ordering {
    let lhs = (dot_a as u128) * (dot_a as u128) * (norm_sq_b as u128);
    let rhs = (dot_b as u128) * (dot_b as u128) * (norm_sq_a as u128);
    lhs.cmp(&rhs)
}

/// Cosine between a cluster and a user. When the user is a member its own
/// contribution is removed first, so a user is never compared with itself.
pub fn cluster_similarity(cluster: &ClusterVector, user: &UserVector, user_is_member: bool) -> Result<f64> {
    let (dot, norm_sq) = cluster_similarity_parts(cluster, user, user_is_member)?;
    Ok(cosine_from_parts(dot, norm_sq, user.norm_sq()))
}

/// Integer dot product and squared cluster norm behind [`cluster_similarity`].
pub fn cluster_similarity_parts(
    cluster: &ClusterVector,
    user: &UserVector,
    user_is_member: bool,
) -> Result<(u64, u64)> {
    let dot = cluster.dot_user(user);
    if !user_is_member {
        return Ok((dot, cluster.norm_sq()));
    }
    for &d in user.dims() {
        if cluster.get(d) == 0 {
            return Err(Error::InternalState(format!("member dimension {d} missing from cluster sum")));
        }
    }
    Ok(without_member(dot, cluster.norm_sq(), user.len() as u64))
}

/// Dot product and squared norm of `cluster - user` against `user`, from the
/// values taken with the user still inside. `n` is the user's contact count.
pub fn without_member(dot: u64, norm_sq: u64, n: u64) -> (u64, u64) {
    // Σ(c_d - u_d)·u_d = dot - |u|;  Σ(c_d - u_d)² = |c|² - 2·dot + |u|
    (dot - n, norm_sq + n - 2 * dot)
}

/// Inverted index from dimension to the clusters whose sum vector has a
/// non-zero count in that dimension. Each posting carries that count so
/// candidate scoring never has to look into the cluster itself.
#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    postings: Vec<Vec<(ClusterId, u32)>>,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, dim: DimId) -> &mut Vec<(ClusterId, u32)> {
        let i = dim as usize;
        if i >= self.postings.len() {
            self.postings.resize_with(i + 1, Vec::new);
        }
        &mut self.postings[i]
    }

    pub fn postings(&self, dim: DimId) -> &[(ClusterId, u32)] {
        self.postings.get(dim as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn increment(&mut self, dim: DimId, cluster: ClusterId) {
        let slot = self.slot(dim);
        match slot.iter_mut().find(|(c, _)| *c == cluster) {
            Some((_, n)) => *n += 1,
            None => slot.push((cluster, 1)),
        }
    }

    pub fn decrement(&mut self, dim: DimId, cluster: ClusterId) -> Result<()> {
        let slot = self.slot(dim);
        let Some(pos) = slot.iter().position(|(c, _)| *c == cluster) else {
            return Err(Error::InternalState(format!("cluster {cluster} absent from postings of dimension {dim}")));
        };
        slot[pos].1 -= 1;
        if slot[pos].1 == 0 {
            slot.swap_remove(pos);
        }
        Ok(())
    }

    /// Clusters sharing at least one dimension with `user`.
    pub fn candidate_clusters(&self, user: &UserVector) -> BTreeSet<ClusterId> {
        user.dims().iter().flat_map(|&d| self.postings(d).iter().map(|&(c, _)| c)).collect()
    }

    /// Sums `cluster · user` into `scratch` for every cluster sharing a
    /// dimension with `user`; those clusters are appended to `touched`.
    pub fn accumulate_dots(&self, user: &UserVector, scratch: &mut DotScratch, touched: &mut Vec<ClusterId>) {
        for &d in user.dims() {
            for &(c, n) in self.postings(d) {
                let slot = scratch.slot(c);
                if *slot == 0 {
                    touched.push(c);
                }
                *slot += n as u64;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.postings.iter().filter(|p| !p.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(dim, cluster, count)` postings, sorted; used by validation.
    pub fn sorted_postings(&self) -> Vec<(DimId, ClusterId, u32)> {
        let mut v: Vec<_> = self
            .postings
            .iter()
            .enumerate()
            .flat_map(|(d, p)| p.iter().map(move |&(c, n)| (d as DimId, c, n)))
            .collect();
        v.sort_unstable();
        v
    }
}

/// Reusable per-cluster accumulator for [`InvertedIndex::accumulate_dots`].
#[derive(Debug, Clone, Default)]
pub struct DotScratch {
    dots: Vec<u64>,
}

impl DotScratch {
    fn slot(&mut self, c: ClusterId) -> &mut u64 {
        let i = c.0 as usize;
        if i >= self.dots.len() {
            self.dots.resize((i + 1).next_power_of_two(), 0);
        }
        &mut self.dots[i]
    }

    pub fn get(&self, c: ClusterId) -> u64 {
        self.dots.get(c.0 as usize).copied().unwrap_or(0)
    }

    pub fn clear(&mut self, touched: &[ClusterId]) {
        for c in touched {
            self.dots[c.0 as usize] = 0;
        }
    }
}

/// Adds a member's vector to a cluster sum and keeps the index in step.
pub fn add_member_vector(
    cluster_id: ClusterId,
    vector: &mut ClusterVector,
    user: &UserVector,
    index: &mut InvertedIndex,
) {
    for &d in user.dims() {
        vector.increment(d);
        index.increment(d, cluster_id);
    }
}

/// Inverse of [`add_member_vector`].
pub fn remove_member_vector(
    cluster_id: ClusterId,
    vector: &mut ClusterVector,
    user: &UserVector,
    index: &mut InvertedIndex,
) -> Result<()> {
    for &d in user.dims() {
        vector.decrement(d)?;
        index.decrement(d, cluster_id)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn uv(dims: &[u32]) -> UserVector {
        UserVector::from_dims(dims.iter().copied())
    }

    fn brute_cosine(a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>) -> f64 {
        let dot: f64 = a.iter().map(|(d, x)| x * b.get(d).copied().unwrap_or(0.0)).sum();
        let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    fn dense(u: &UserVector) -> BTreeMap<u32, f64> {
        u.dims().iter().map(|&d| (d, 1.0)).collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&uv(&[1, 2]), &uv(&[1, 2])), 1.0);
        assert_eq!(cosine(&uv(&[1]), &uv(&[2])), 0.0);
        // dot 1 / (√2 · √2)
        assert!((cosine(&uv(&[1, 2]), &uv(&[2, 3])) - 0.5).abs() < 1e-15);
        assert_eq!(cosine(&uv(&[]), &uv(&[1])), 0.0);
        assert_eq!(cosine(&uv(&[]), &uv(&[])), 0.0);
    }

    #[test]
    fn user_vector_is_a_set() {
        let mut u = uv(&[3, 1]);
        assert!(!u.insert(3));
        assert!(u.insert(2));
        assert_eq!(u.dims(), &[1, 2, 3]);
        assert!((u.norm() - 3f64.sqrt()).abs() < 1e-15);
    }

    fn cluster_of(members: &[&UserVector]) -> (ClusterVector, InvertedIndex) {
        let mut v = ClusterVector::new();
        let mut idx = InvertedIndex::new();
        for m in members {
            add_member_vector(ClusterId(7), &mut v, m, &mut idx);
        }
        (v, idx)
    }

    #[test]
    fn cluster_similarity_examples() {
        let u = uv(&[1]);
        let (c, _) = cluster_of(&[&u]);
        assert_eq!(cluster_similarity(&c, &u, true).unwrap(), 0.0);

        let a = uv(&[1]);
        let b = uv(&[1, 2]);
        let (c, _) = cluster_of(&[&a, &b]);
        assert_eq!(c.sorted_entries(), vec![(1, 2), (2, 1)]);
        // rebuilt from the remaining member {r1}: cos({r1}, {r1, r2})
        let expected = brute_cosine(&dense(&a), &dense(&b));
        assert!((cluster_similarity(&c, &b, true).unwrap() - expected).abs() < 1e-12);
        assert!((expected - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

        let (c, _) = cluster_of(&[&a]);
        assert_eq!(cluster_similarity(&c, &a, false).unwrap(), 1.0);
    }

    #[test]
    fn member_flag_on_foreign_vector_is_an_error() {
        let (c, _) = cluster_of(&[&uv(&[1])]);
        assert!(matches!(cluster_similarity(&c, &uv(&[2]), true), Err(Error::InternalState(_))));
    }

    #[test]
    fn add_remove_examples() {
        let r1 = uv(&[1]);
        let (mut c, mut idx) = cluster_of(&[&r1]);
        assert_eq!(c.sorted_entries(), vec![(1, 1)]);
        assert_eq!(idx.postings(1), &[(ClusterId(7), 1)]);

        add_member_vector(ClusterId(7), &mut c, &r1, &mut idx);
        remove_member_vector(ClusterId(7), &mut c, &r1, &mut idx).unwrap();
        assert_eq!(c.sorted_entries(), vec![(1, 1)]);
        remove_member_vector(ClusterId(7), &mut c, &r1, &mut idx).unwrap();
        assert!(c.is_empty());
        assert!(idx.postings(1).is_empty());
        assert!(remove_member_vector(ClusterId(7), &mut c, &r1, &mut idx).is_err());
    }

    #[test]
    fn candidate_lookup() {
        let mut idx = InvertedIndex::new();
        assert!(idx.candidate_clusters(&uv(&[])).is_empty());
        idx.increment(1, ClusterId(1));
        idx.increment(1, ClusterId(2));
        idx.increment(5, ClusterId(3));
        let got: Vec<_> = idx.candidate_clusters(&uv(&[1])).into_iter().collect();
        assert_eq!(got, vec![ClusterId(1), ClusterId(2)]);
    }

    #[test]
    fn interner_round_trip() {
        let mut i = Interner::default();
        assert_eq!(i.intern("a"), 0);
        assert_eq!(i.intern("b"), 1);
        assert_eq!(i.intern("a"), 0);
        let names: Vec<String> = i.clone().into();
        let back = Interner::from(names);
        assert_eq!(back.get("b"), Some(1));
        assert_eq!(back.name(0), Some("a"));
    }

    fn arb_vec() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..30, 0..12)
    }

    proptest! {
        #[test]
        fn cosine_properties(a in arb_vec(), b in arb_vec()) {
            let (ua, ub) = (uv(&a), uv(&b));
            let ab = cosine(&ua, &ub);
            prop_assert_eq!(ab, cosine(&ub, &ua));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - brute_cosine(&dense(&ua), &dense(&ub))).abs() < 1e-12);
            if !ua.is_empty() {
                prop_assert!((cosine(&ua, &ua) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sums_track_members(ops in prop::collection::vec((arb_vec(), any::<bool>()), 1..40)) {
            let mut c = ClusterVector::new();
            let mut idx = InvertedIndex::new();
            let mut members: Vec<UserVector> = Vec::new();
            for (dims, remove) in ops {
                if remove && !members.is_empty() {
                    let m = members.remove(dims.len() % members.len());
                    remove_member_vector(ClusterId(1), &mut c, &m, &mut idx).unwrap();
                } else {
                    let m = uv(&dims);
                    add_member_vector(ClusterId(1), &mut c, &m, &mut idx);
                    members.push(m);
                }
                let mut expected: BTreeMap<u32, u32> = BTreeMap::new();
                for m in &members {
                    for &d in m.dims() {
                        *expected.entry(d).or_insert(0) += 1;
                    }
                }
                let expected: Vec<_> = expected.into_iter().collect();
                prop_assert_eq!(c.sorted_entries(), expected.clone());
                prop_assert_eq!(c.norm_sq(), c.recompute_norm_sq());
                let postings: Vec<_> = expected.iter().map(|&(d, n)| (d, ClusterId(1), n)).collect();
                prop_assert_eq!(idx.sorted_postings(), postings);
            }
        }

        #[test]
        fn self_removal_matches_rebuild(members in prop::collection::vec(arb_vec(), 1..8), pick in 0usize..8) {
            let vs: Vec<UserVector> = members.iter().map(|m| uv(m)).collect();
            let refs: Vec<&UserVector> = vs.iter().collect();
            let (c, _) = cluster_of(&refs);
            let who = pick % vs.len();
            let rest: Vec<&UserVector> = vs.iter().enumerate().filter(|&(i, _)| i != who).map(|(_, v)| v).collect();
            let (rebuilt, _) = cluster_of(&rest);
            let got = cluster_similarity(&c, &vs[who], true).unwrap();
            prop_assert!((got - cosine(&rebuilt, &vs[who])).abs() < 1e-12);
        }
    }
}
