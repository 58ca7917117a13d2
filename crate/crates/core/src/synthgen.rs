//! Seeded synthetic workloads with ground truth.
//!
//! Legitimate traffic comes from senders attached to overlapping social
//! communities of recipients, with Zipf-distributed sender activity. Spam
//! comes from spammers that each work one shared distribution list; with
//! probability `sender_churn_rate` a spam message is sent from a fresh,
//! never-seen domain that reuses an existing list. Auxiliary labels are the
//! ground truth with a seeded fraction flipped.
//!
//! Default magnitudes are one hundredth of the reference workload
//! (365,001 messages, 27,734 senders, 38,875 recipients).

use std::collections::BTreeSet;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, MessageRecord, RawLogRecord, SenderIdentity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub n_messages: usize,
    pub n_legit_senders: usize,
    pub n_spam_senders: usize,
    pub n_recipients: usize,
    pub n_communities: usize,
    pub community_size_mean: usize,
    pub n_distribution_lists: usize,
    pub list_size_mean: usize,
    pub spam_fraction: f64,
    pub legit_recipients_mean: f64,
    pub spam_recipients_mean: f64,
    /// Probability that a spam message comes from a fresh sender domain.
    pub sender_churn_rate: f64,
    /// Share of recipients a legitimate message draws from outside the
    /// sender's community.
    pub legit_outside_rate: f64,
    /// Fraction of auxiliary labels flipped relative to ground truth.
    pub aux_flip_rate: f64,
    pub start_ts: i64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_messages: 3650,
            n_legit_senders: 100,
            n_spam_senders: 50,
            n_recipients: 389,
            n_communities: 24,
            community_size_mean: 12,
            n_distribution_lists: 12,
            list_size_mean: 20,
            spam_fraction: 0.475,
            legit_recipients_mean: 1.5,
            spam_recipients_mean: 8.0,
            sender_churn_rate: 0.075,
            legit_outside_rate: 0.1,
            aux_flip_rate: 0.05,
            start_ts: 1_074_470_400,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_messages", self.n_messages),
            ("n_legit_senders", self.n_legit_senders),
            ("n_spam_senders", self.n_spam_senders),
            ("n_recipients", self.n_recipients),
            ("n_communities", self.n_communities),
            ("community_size_mean", self.community_size_mean),
            ("n_distribution_lists", self.n_distribution_lists),
            ("list_size_mean", self.list_size_mean),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let fractions = [
            ("spam_fraction", self.spam_fraction),
            ("sender_churn_rate", self.sender_churn_rate),
            ("legit_outside_rate", self.legit_outside_rate),
            ("aux_flip_rate", self.aux_flip_rate),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.community_size_mean > self.n_recipients {
            return Err(Error::Config("community_size_mean exceeds n_recipients".into()));
        }
        if self.list_size_mean > self.n_recipients {
            return Err(Error::Config("list_size_mean exceeds n_recipients".into()));
        }
        if self.legit_recipients_mean < 1.0 || self.spam_recipients_mean < 1.0 {
            return Err(Error::Config("recipients-per-message means must be at least 1".into()));
        }
        Ok(())
    }
}

/// A generated stream: raw records carrying both the auxiliary label and
/// the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub raw: Vec<RawLogRecord>,
}

impl Workload {
    pub fn truth(&self) -> Vec<Label> {
        self.raw.iter().map(|r| r.truth.expect("generated records carry truth")).collect()
    }

    pub fn records(&self, identity: SenderIdentity) -> Vec<MessageRecord> {
        self.raw
            .iter()
            .enumerate()
            .map(|(i, r)| r.normalize(identity, i + 1).expect("generated records are well formed"))
            .collect()
    }

    /// Replaces the auxiliary labels by a fresh flip of the ground truth.
    pub fn with_flip_rate(&self, flip_rate: f64, seed: u64) -> Result<Workload> {
        let aux = flip_labels(&self.truth(), flip_rate, seed)?;
        let mut out = self.clone();
        for (r, a) in out.raw.iter_mut().zip(aux) {
            r.aux = a;
        }
        Ok(out)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.raw {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn group_sizes(rng: &mut ChaCha8Rng, n: usize, mean: usize, max: usize) -> Vec<usize> {
    let lo = (mean / 2).max(2).min(max);
    let hi = (mean + mean / 2).max(lo).min(max);
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

fn recipient_count(rng: &mut ChaCha8Rng, mean: f64, cap: usize) -> usize {
    let extra = if mean > 1.0 { Poisson::new(mean - 1.0).map(|p| p.sample(rng) as usize).unwrap_or(0) } else { 0 };
    (1 + extra).min(cap.max(1))
}

fn local_part(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..8).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect()
}

pub fn generate(spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let recipients: Vec<String> =
        (0..spec.n_recipients).map(|i| format!("user{i:04}@dept{}.example.br", i % 17)).collect();

    let community_sizes = group_sizes(&mut rng, spec.n_communities, spec.community_size_mean, spec.n_recipients);
    let communities: Vec<Vec<usize>> =
        community_sizes.iter().map(|&k| sample(&mut rng, spec.n_recipients, k).into_vec()).collect();
    let list_sizes = group_sizes(&mut rng, spec.n_distribution_lists, spec.list_size_mean, spec.n_recipients);
    let lists: Vec<Vec<usize>> =
        list_sizes.iter().map(|&k| sample(&mut rng, spec.n_recipients, k).into_vec()).collect();

    let legit_community: Vec<usize> = (0..spec.n_legit_senders).map(|j| j % spec.n_communities).collect();
    let spam_list: Vec<usize> = (0..spec.n_spam_senders).map(|j| j % spec.n_distribution_lists).collect();

    // Zipf(1) activity over a seeded permutation of the legitimate senders
    let mut order: Vec<usize> = (0..spec.n_legit_senders).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut weights = vec![0.0; spec.n_legit_senders];
    for (rank, &j) in order.iter().enumerate() {
        weights[j] = 1.0 / (rank + 1) as f64;
    }
    let legit_activity = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;

    let mut raw = Vec::with_capacity(spec.n_messages);
    let mut truth = Vec::with_capacity(spec.n_messages);
    let mut ts = spec.start_ts;
    let mut fresh = 0usize;
    for i in 0..spec.n_messages {
        ts += rng.random_range(1..=20);
        let is_spam = rng.random_bool(spec.spam_fraction);
        let (from, to) = if is_spam {
            let (domain, list) = if rng.random_bool(spec.sender_churn_rate) {
                fresh += 1;
                let tag = local_part(&mut rng);
                (format!("{tag}{fresh}.example.biz"), rng.random_range(0..lists.len()))
            } else {
                let j = rng.random_range(0..spec.n_spam_senders);
                (format!("bulk{j:03}.example.net"), spam_list[j])
            };
            let members = &lists[list];
            let k = recipient_count(&mut rng, spec.spam_recipients_mean, members.len());
            let picks = sample(&mut rng, members.len(), k);
            let to: Vec<String> = picks.iter().map(|p| recipients[members[p]].clone()).collect();
            (format!("{}@{domain}", local_part(&mut rng)), to)
        } else {
            let j = legit_activity.sample(&mut rng);
            let community = &communities[legit_community[j]];
            let k = recipient_count(&mut rng, spec.legit_recipients_mean, community.len());
            let mut chosen = BTreeSet::new();
            let mut to = Vec::with_capacity(k);
            while to.len() < k {
                let r = if rng.random_bool(spec.legit_outside_rate) {
                    rng.random_range(0..spec.n_recipients)
                } else {
                    community[rng.random_range(0..community.len())]
                };
                if chosen.insert(r) {
                    to.push(recipients[r].clone());
                }
            }
            (format!("staff{j:03}@org{j:03}.example.com"), to)
        };
        truth.push(if is_spam { Label::Spam } else { Label::Ham });
        raw.push(RawLogRecord { id: Some(format!("g{:06}", i + 1)), ts, from, to, aux: Label::Ham, truth: None });
    }

    let aux = flip_labels(&truth, spec.aux_flip_rate, spec.seed)?;
    for ((r, t), a) in raw.iter_mut().zip(truth).zip(aux) {
        r.truth = Some(t);
        r.aux = a;
    }
    Ok(Workload { spec: spec.clone(), raw })
}

/// `aux = truth XOR Bernoulli(flip_rate)`, drawn from a stream independent
/// of the generator's own.
pub fn flip_labels(truth: &[Label], flip_rate: f64, seed: u64) -> Result<Vec<Label>> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::Config(format!("flip rate must lie in [0, 1], got {flip_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Ok(truth.iter().map(|&t| if rng.random_bool(flip_rate) { t.flipped() } else { t }).collect())
}
