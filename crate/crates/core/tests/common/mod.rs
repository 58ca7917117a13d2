//! Test-only reference implementations and corpus helpers.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spamcluster::ingest::{parse_stream, InputFormat, Label, MessageRecord, SenderIdentity};

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn golden_records() -> Vec<MessageRecord> {
    let file = std::fs::File::open(fixture("golden_trace.jsonl")).unwrap();
    parse_stream(std::io::BufReader::new(file), InputFormat::JsonLines, SenderIdentity::Domain).unwrap().records
}

/// Cosine exactly as the engine defines it on integer parts.
fn cos(dot: u64, a: u64, b: u64) -> f64 {
    if dot == 0 || a == 0 || b == 0 {
        return 0.0;
    }
    (dot as f64 / ((a as f64) * (b as f64)).sqrt()).clamp(0.0, 1.0)
}

/// One side of the brute-force clustering: every comparison rebuilds the
/// cluster sum from its member list after physically removing the user.
#[derive(Default)]
pub struct OracleSide {
    vectors: Vec<BTreeSet<u32>>,
    cluster_of: Vec<Option<u64>>,
    members: BTreeMap<u64, BTreeSet<u32>>,
    next: u64,
}

impl OracleSide {
    fn ensure(&mut self, u: u32) {
        let n = u as usize + 1;
        if self.vectors.len() < n {
            self.vectors.resize_with(n, BTreeSet::new);
            self.cluster_of.resize(n, None);
        }
    }

    fn assign(&mut self, u: u32, tau: f64) -> u64 {
        if let Some(c) = self.cluster_of[u as usize].take() {
            let m = self.members.get_mut(&c).unwrap();
            m.remove(&u);
            if m.is_empty() {
                self.members.remove(&c);
            }
        }
        let uv = &self.vectors[u as usize];
        let mut best: Option<(u64, u64, u64)> = None;
        for (&c, ms) in &self.members {
            let mut sum: BTreeMap<u32, u64> = BTreeMap::new();
            for &m in ms {
                for &d in &self.vectors[m as usize] {
                    *sum.entry(d).or_insert(0) += 1;
                }
            }
            let dot: u64 = uv.iter().map(|d| sum.get(d).copied().unwrap_or(0)).sum();
            let ns: u64 = sum.values().map(|x| x * x).sum();
            if dot == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bd, bn)) => (dot as u128).pow(2) * bn as u128 > (bd as u128).pow(2) * ns as u128,
            };
            if better {
                best = Some((c, dot, ns));
            }
        }
        let target = match best {
            Some((c, dot, ns)) if cos(dot, ns, uv.len() as u64) > tau => c,
            _ => {
                self.next += 1;
                self.next - 1
            }
        };
        self.members.entry(target).or_default().insert(u);
        self.cluster_of[u as usize] = Some(target);
        target
    }
}

/// Brute-force re-implementation of per-message placement.
#[derive(Default)]
pub struct OracleClustering {
    senders: BTreeMap<String, u32>,
    recipients: BTreeMap<String, u32>,
    pub sender_side: OracleSide,
    pub recipient_side: OracleSide,
}

fn intern(table: &mut BTreeMap<String, u32>, key: &str) -> u32 {
    let n = table.len() as u32;
    *table.entry(key.to_owned()).or_insert(n)
}

impl OracleClustering {
    /// Returns the sender's cluster and each distinct recipient's cluster.
    pub fn process(&mut self, m: &MessageRecord, tau: f64, assign_before_update: bool) -> (u64, Vec<u64>) {
        let s = intern(&mut self.senders, &m.sender);
        self.sender_side.ensure(s);
        let mut rs = Vec::new();
        for r in &m.recipients {
            let id = intern(&mut self.recipients, r);
            if !rs.contains(&id) {
                self.recipient_side.ensure(id);
                rs.push(id);
            }
        }
        let add = |me: &mut Self| {
            for &r in &rs {
                me.sender_side.vectors[s as usize].insert(r);
                me.recipient_side.vectors[r as usize].insert(s);
            }
        };
        if !assign_before_update {
            add(self);
        }
        let sc = self.sender_side.assign(s, tau);
        let rcs: Vec<u64> = rs.iter().map(|&r| self.recipient_side.assign(r, tau)).collect();
        if assign_before_update {
            add(self);
        }
        (sc, rcs)
    }
}

/// Small random corpus with community structure and a few heavy senders.
pub fn random_corpus(seed: u64, max_users: usize) -> Vec<MessageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_senders = rng.random_range(3..=max_users / 3);
    let n_recipients = rng.random_range(3..=max_users - n_senders);
    let n_groups = rng.random_range(1..=6);
    let groups: Vec<Vec<usize>> = (0..n_groups)
        .map(|_| (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..n_recipients)).collect())
        .collect();
    let n_messages = rng.random_range(20..=300);
    (0..n_messages)
        .map(|i| {
            let sender = rng.random_range(0..n_senders);
            let k = rng.random_range(1..=6);
            let recipients = if rng.random_bool(0.7) {
                let g = &groups[sender % n_groups];
                (0..k).map(|_| *g.choose(&mut rng).unwrap()).collect::<Vec<_>>()
            } else {
                (0..k).map(|_| rng.random_range(0..n_recipients)).collect()
            };
            MessageRecord {
                msg_id: format!("m{i}"),
                timestamp: i as i64,
                sender: format!("s{sender}.example"),
                recipients: recipients.into_iter().map(|r| format!("r{r}@x.example")).collect(),
                aux_label: if rng.random_bool(0.5) { Label::Spam } else { Label::Ham },
            }
        })
        .collect()
}
