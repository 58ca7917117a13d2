//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spamcluster::clustering::{Comparison, SideState, SimilarityProbe};
use spamcluster::engine::replay;
use spamcluster::evaluation::{
    beta_cv, bin_heatmap, noise_correction_experiment, omega_sweep, parse_grid, tau_sweep, ClusterView,
};
use spamcluster::ingest::parse_stream;
use spamcluster::scoring::spam_rank;
use spamcluster::snapshot::{read_snapshot, write_snapshot};
use spamcluster::synthgen::{generate, WorkloadSpec};
use spamcluster::vectorspace::{ClusterVector, UserVector};
use spamcluster::{Decision, Engine, EngineConfig, Error, InputFormat, Label, SenderIdentity};

use common::{golden_records, random_corpus, OracleClustering};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn default_corpus() -> spamcluster::synthgen::Workload {
    generate(&WorkloadSpec::default()).expect("default corpus")
}

// 1 -------------------------------------------------------------------------

fn golden_trace() -> Outcome {
    use Decision::{Deferred as D, Legitimate as L, Spam as S};
    use Label::{Ham, Spam};
    // Traced by hand through the per-message algorithm.
    let expected: [(f64, f64, f64, Decision, Label); 10] = [
        (1.0, 1.0, 1.0, S, Spam),
        (1.0, 1.0, 1.0, S, Spam),
        (0.0, 0.0, 0.0, L, Ham),
        (0.0, 0.0, 0.0, L, Ham),
        (1.0, 1.0, 1.0, S, Spam),
        (1.0 / 2.0, 7.0 / 24.0, 19.0 / 48.0, D, Spam),
        (3.0 / 4.0, 11.0 / 12.0, 5.0 / 6.0, D, Ham),
        (1.0 / 2.0, 1.0 / 3.0, 5.0 / 12.0, D, Ham),
        (1.0 / 2.0, 14.0 / 15.0, 43.0 / 60.0, D, Spam),
        (7.0 / 12.0, 7.0 / 24.0, 7.0 / 16.0, D, Ham),
    ];
    let start = Instant::now();
    let records = golden_records();
    let (engine, verdicts) = replay(EngineConfig::default(), &records).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(verdicts.len() == 10, || format!("{} verdicts", verdicts.len()))?;
    for (i, (v, &(ps, pr, sr, d, eff))) in verdicts.iter().zip(&expected).enumerate() {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        ensure(close(v.p_s, ps) && close(v.p_r, pr) && close(v.spam_rank, sr), || {
            format!("message {}: got ({}, {}, {}), want ({ps}, {pr}, {sr})", i + 1, v.p_s, v.p_r, v.spam_rank)
        })?;
        ensure(v.decision == d && v.effective_label == eff && v.aux_label == records[i].aux_label, || {
            format!("message {}: decision {:?}/{:?}", i + 1, v.decision, v.effective_label)
        })?;
    }
    // final grouping from the trace: {a, b} and {c, d}; {r1, r2, r5} and {r3, r4}
    let s = engine.state();
    let group = |side: &SideState, names: &spamcluster::vectorspace::Interner, keys: &[&str]| {
        keys.iter().map(|k| side.user(names.get(k).unwrap()).unwrap().cluster.unwrap()).collect::<Vec<_>>()
    };
    let ab = group(&s.sender_side, &s.senders, &["a.com", "b.com"]);
    let cd = group(&s.sender_side, &s.senders, &["c.com", "d.com"]);
    let r125 = group(&s.recipient_side, &s.recipients, &["r1@x.br", "r2@x.br", "r5@x.br"]);
    let r34 = group(&s.recipient_side, &s.recipients, &["r3@x.br", "r4@x.br"]);
    ensure(ab[0] == ab[1] && cd[0] == cd[1] && ab[0] != cd[0], || "sender grouping differs".into())?;
    ensure(r125.iter().all(|&c| c == r125[0]) && r34[0] == r34[1] && r34[0] != r125[0], || {
        "recipient grouping differs".into()
    })?;
    ensure(elapsed < 1.0, || format!("took {elapsed:.3}s"))?;
    Ok(format!("10/10 verdicts match, {:.1} ms", elapsed * 1e3))
}

// 2 -------------------------------------------------------------------------

/// Projects `(p_s, p_r) / √2` onto the unit diagonal and measures the
/// length of the projected segment from the origin.
fn projected_length(p_s: f64, p_r: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let (x, y) = (p_s * r, p_r * r);
    let (dx, dy) = (r, r);
    let t = x * dx + y * dy;
    let (px, py) = (t * dx, t * dy);
    (px * px + py * py).sqrt()
}

fn spam_rank_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (ps, pr) = (rng.random::<f64>(), rng.random::<f64>());
        let sr = spam_rank(ps, pr).map_err(|e| e.to_string())?;
        let err = (sr - projected_length(ps, pr)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("({ps}, {pr}): {sr} vs {}", projected_length(ps, pr)))?;
    }
    for _ in 0..10_000 {
        let (a, b) = (rng.random_range(0..=1024u32), rng.random_range(0..=1024u32));
        let (ps, pr) = (a as f64 / 1024.0, b as f64 / 1024.0);
        let sr = spam_rank(ps, pr).map_err(|e| e.to_string())?;
        // (a + b) / 2048 is exact in binary floating point
        ensure(sr == (a + b) as f64 / 2048.0, || format!("dyadic ({a}, {b})/1024 gave {sr}"))?;
    }
    Ok(format!("10000 random pairs, max deviation {worst:.1e}; 10000 dyadic pairs exact"))
}

// 3 -------------------------------------------------------------------------

fn clustering_oracle() -> Outcome {
    let mut decisions = 0usize;
    for seed in 0..100u64 {
        let records = random_corpus(seed, 200);
        let tau = [0.0, 0.2, 0.35, 0.5, 0.5, 0.6, 0.75, 0.9, 1.0, 0.5][seed as usize % 10];
        let assign_before_update = seed % 4 == 3;
        let config = EngineConfig { tau, assign_before_update, ..EngineConfig::default() };
        let mut engine = Engine::new(config).map_err(|e| e.to_string())?;
        let mut oracle = OracleClustering::default();
        for (i, m) in records.iter().enumerate() {
            let (placement, _) = engine.process_detailed(m).map_err(|e| e.to_string())?;
            let (sc, rcs) = oracle.process(m, tau, assign_before_update);
            let got: Vec<u64> = placement.recipient_clusters.iter().map(|c| c.0).collect();
            ensure(placement.sender_cluster.0 == sc && got == rcs, || {
                format!(
                    "corpus {seed} (tau {tau}) message {i}: engine {:?}/{got:?}, oracle {sc}/{rcs:?}",
                    placement.sender_cluster
                )
            })?;
            decisions += 1 + rcs.len();
        }
        engine.validate().map_err(|e| e.to_string())?;
    }
    Ok(format!("100 corpora, {decisions} assignments identical"))
}

// 4 -------------------------------------------------------------------------

#[derive(Default)]
struct Tally {
    comparisons: u64,
    own_cluster: u64,
    violations: Vec<String>,
}

struct SelfRemovalProbe(Arc<Mutex<Tally>>);

impl SimilarityProbe for SelfRemovalProbe {
    fn on_comparison(&mut self, side: &SideState, ev: &Comparison) {
        let user = side.user(ev.user).expect("known user");
        let cluster = side.cluster(ev.cluster).expect("live cluster");
        let mut sum: BTreeMap<u32, u64> = BTreeMap::new();
        for &m in cluster.members.iter().filter(|&&m| m != ev.user) {
            for &d in side.user(m).unwrap().vector.dims() {
                *sum.entry(d).or_insert(0) += 1;
            }
        }
        let dot: u64 = user.vector.dims().iter().map(|d| sum.get(d).copied().unwrap_or(0)).sum();
        let norm_sq: u64 = sum.values().map(|x| x * x).sum();
        let own = user.cluster == Some(ev.cluster);
        let mut t = self.0.lock().unwrap();
        t.comparisons += 1;
        t.own_cluster += own as u64;
        if (ev.dot, ev.cluster_norm_sq) != (dot, norm_sq) || (own && !ev.self_removed) {
            t.violations.push(format!(
                "{:?} user {} vs {}: used ({}, {}), sum without user gives ({dot}, {norm_sq})",
                ev.side, ev.user, ev.cluster, ev.dot, ev.cluster_norm_sq
            ));
        }
    }
}

fn self_removal() -> Outcome {
    let records = default_corpus().records(SenderIdentity::Domain);
    let tally = Arc::new(Mutex::new(Tally::default()));
    let mut engine = Engine::new(EngineConfig::default()).map_err(|e| e.to_string())?;
    engine.set_probe(Box::new(SelfRemovalProbe(tally.clone())));
    engine.run(&records).map_err(|e| e.to_string())?;
    let t = tally.lock().unwrap();
    ensure(t.own_cluster > 0, || "no comparison against a current cluster was observed".into())?;
    ensure(t.violations.is_empty(), || format!("{} violations, first: {}", t.violations.len(), t.violations[0]))?;
    Ok(format!("{} comparisons ({} against the current cluster), 0 violations", t.comparisons, t.own_cluster))
}

// 5 -------------------------------------------------------------------------

fn degenerate_omega() -> Outcome {
    let records = default_corpus().records(SenderIdentity::Domain);
    let (_, verdicts) = replay(EngineConfig::with_params(0.5, 1.0), &records).map_err(|e| e.to_string())?;
    let agree = verdicts.iter().filter(|v| v.effective_label == v.aux_label).count();
    let classified = verdicts.iter().filter(|v| v.classified()).count();
    ensure(agree == verdicts.len() && classified == 0, || {
        format!("{agree}/{} effective labels equal aux, {classified} classified", verdicts.len())
    })?;
    Ok(format!("{agree}/{} effective labels equal aux, classified_count 0", verdicts.len()))
}

// 6 -------------------------------------------------------------------------

fn accordance_tradeoff() -> Outcome {
    let start = Instant::now();
    let records = default_corpus().records(SenderIdentity::Domain);
    let grid = parse_grid("0.5:1.0:0.05").map_err(|e| e.to_string())?;
    let sweep = omega_sweep(&records, EngineConfig::default(), &grid).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(sweep.rows.len() == 11, || format!("{} grid points", sweep.rows.len()))?;
    for w in sweep.rows.windows(2) {
        ensure(w[1].accordance_pct >= w[0].accordance_pct, || {
            format!("accordance falls from {} to {} at omega {}", w[0].accordance_pct, w[1].accordance_pct, w[1].value)
        })?;
        ensure(w[1].classified_count <= w[0].classified_count, || format!("classified rises at omega {}", w[1].value))?;
    }
    ensure(elapsed < 30.0, || format!("took {elapsed:.1}s"))?;
    let (first, last) = (&sweep.rows[0], &sweep.rows[10]);
    Ok(format!(
        "accordance {:.2}% -> {:.2}%, classified {} -> {}, {:.2}s",
        first.accordance_pct, last.accordance_pct, first.classified_count, last.classified_count, elapsed
    ))
}

// 7 -------------------------------------------------------------------------

fn bin_separation() -> Outcome {
    let records = default_corpus().records(SenderIdentity::Domain);
    let (_, verdicts) = replay(EngineConfig::default(), &records).map_err(|e| e.to_string())?;
    let grid = bin_heatmap(&verdicts, 0.25).map_err(|e| e.to_string())?;
    ensure(grid.total() == verdicts.len(), || "cells do not partition the verdicts".into())?;
    let sep = grid.corner_separation().ok_or("corner cells empty")?;
    ensure(sep >= 0.5, || format!("separation {sep:.3}"))?;
    Ok(format!("separation {sep:.3}"))
}

// 8 -------------------------------------------------------------------------

fn false_positive_correction() -> Outcome {
    let start = Instant::now();
    let workload = default_corpus();
    let r = noise_correction_experiment(&workload, 0.10, 42, EngineConfig::with_params(0.5, 0.85))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(r.engine_error_rate < r.aux_error_rate, || {
        format!("engine error {:.4} >= aux error {:.4}", r.engine_error_rate, r.aux_error_rate)
    })?;
    ensure(r.fp_corrected > r.fp_introduced, || {
        format!("fp corrected {} <= introduced {}", r.fp_corrected, r.fp_introduced)
    })?;
    ensure(elapsed < 30.0, || format!("took {elapsed:.1}s"))?;
    Ok(format!(
        "aux error {:.4}, engine error {:.4}, fp corrected {} vs introduced {}",
        r.aux_error_rate, r.engine_error_rate, r.fp_corrected, r.fp_introduced
    ))
}

// 9 -------------------------------------------------------------------------

/// Dense, two-pass reference for the intra/inter CV ratio.
fn beta_cv_reference(clusters: &[Vec<Vec<f64>>]) -> Option<f64> {
    fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        1.0 - (dot / (na * nb)).clamp(0.0, 1.0)
    }
    fn cv(xs: &[f64]) -> f64 {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        var.sqrt() / mean
    }
    if clusters.len() < 2 || clusters.iter().all(|c| c.len() < 2) {
        return None;
    }
    let dims = clusters[0][0].len();
    let centroids: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| (0..dims).map(|d| c.iter().map(|m| m[d]).sum::<f64>() / c.len() as f64).collect())
        .collect();
    let intra: Vec<f64> =
        clusters.iter().zip(&centroids).flat_map(|(c, cen)| c.iter().map(move |m| cosine_distance(m, cen))).collect();
    let mut inter = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter.push(cosine_distance(&centroids[i], &centroids[j]));
        }
    }
    let intra_cv = cv(&intra);
    if intra_cv == 0.0 {
        return Some(0.0);
    }
    let inter_cv = cv(&inter);
    (inter_cv != 0.0).then(|| intra_cv / inter_cv)
}

fn beta_cv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0;
    for instance in 0..50 {
        let dims = rng.random_range(4..=16u32);
        // with two clusters there is a single centroid distance, whose CV is 0
        let n_clusters = rng.random_range(3..=7);
        let mut dense: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut users: Vec<Vec<UserVector>> = Vec::new();
        for _ in 0..n_clusters {
            let size = rng.random_range(1..=6);
            let mut c_dense = Vec::new();
            let mut c_users = Vec::new();
            for _ in 0..size {
                let mut u = UserVector::default();
                u.insert(rng.random_range(0..dims));
                for d in 0..dims {
                    if rng.random_bool(0.3) {
                        u.insert(d);
                    }
                }
                c_dense.push((0..dims).map(|d| u.contains(d) as u8 as f64).collect());
                c_users.push(u);
            }
            dense.push(c_dense);
            users.push(c_users);
        }
        let sums: Vec<ClusterVector> = users
            .iter()
            .map(|c| {
                let mut v = ClusterVector::new();
                for u in c {
                    for &d in u.dims() {
                        v.increment(d);
                    }
                }
                v
            })
            .collect();
        let views: Vec<ClusterView<'_>> =
            sums.iter().zip(&users).map(|(s, us)| ClusterView { centroid: s, members: us.iter().collect() }).collect();
        match (beta_cv(&views), beta_cv_reference(&dense)) {
            (Ok(a), Some(b)) => {
                ensure((a - b).abs() <= 1e-9, || format!("instance {instance}: {a} vs reference {b}"))?;
                compared += 1;
            }
            (Err(Error::NotComputable(_)), None) => {}
            (a, b) => return Err(format!("instance {instance}: {a:?} vs reference {b:?}")),
        }
    }
    ensure(compared >= 45, || format!("only {compared} computable instances"))?;

    let records = default_corpus().records(SenderIdentity::Domain);
    let grid = parse_grid("0:1:0.1").map_err(|e| e.to_string())?;
    let sweep = tau_sweep(&records, EngineConfig::default(), &grid).map_err(|e| e.to_string())?;
    for w in sweep.rows.windows(2) {
        // rows ascend in tau; walking down, counts must not grow
        ensure(
            w[0].num_sender_clusters <= w[1].num_sender_clusters
                && w[0].num_recipient_clusters <= w[1].num_recipient_clusters,
            || format!("cluster count grows as tau drops from {} to {}", w[1].value, w[0].value),
        )?;
    }
    let (lo, hi) = (&sweep.rows[0], &sweep.rows[sweep.rows.len() - 1]);
    Ok(format!(
        "{compared}/50 instances within 1e-9 (rest agree on not computable); sender clusters {} at tau 1 -> {} at tau 0",
        hi.num_sender_clusters, lo.num_sender_clusters
    ))
}

// 10 ------------------------------------------------------------------------

fn pipeline(raw: &[u8]) -> Result<(usize, f64), String> {
    let start = Instant::now();
    let parsed = parse_stream(raw, InputFormat::JsonLines, SenderIdentity::Domain).map_err(|e| e.to_string())?;
    let mut engine = Engine::new(EngineConfig::default()).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(raw.len() / 2);
    for r in &parsed.records {
        let v = engine.process(r).map_err(|e| e.to_string())?;
        spamcluster::report::write_json_line(&mut out, &v).map_err(|e| e.to_string())?;
    }
    std::hint::black_box(&out);
    Ok((parsed.records.len(), start.elapsed().as_secs_f64()))
}

fn throughput_floor() -> Outcome {
    let mut small = Vec::new();
    default_corpus().write_jsonl(&mut small).map_err(|e| e.to_string())?;
    let (n_small, t_small) = pipeline(&small)?;
    ensure(n_small == 3650, || format!("{n_small} messages parsed"))?;
    ensure(t_small < 2.0, || format!("default corpus took {t_small:.2}s"))?;

    let big = generate(&WorkloadSpec { n_messages: 100_000, ..WorkloadSpec::default() }).map_err(|e| e.to_string())?;
    let mut raw = Vec::new();
    big.write_jsonl(&mut raw).map_err(|e| e.to_string())?;
    let (n_big, t_big) = pipeline(&raw)?;
    let rate = n_big as f64 / t_big;
    ensure(n_big == 100_000, || format!("{n_big} messages parsed"))?;
    ensure(rate >= 10_000.0, || format!("{rate:.0} msg/s"))?;
    Ok(format!("3650 messages in {:.0} ms; 100000 messages at {rate:.0} msg/s", t_small * 1e3))
}

// 11 ------------------------------------------------------------------------

fn snapshot_round_trip() -> Outcome {
    let records = default_corpus().records(SenderIdentity::Domain);
    let (_, expected) = replay(EngineConfig::default(), &records).map_err(|e| e.to_string())?;
    let cut = records.len() / 2;
    let mut first = Engine::new(EngineConfig::default()).map_err(|e| e.to_string())?;
    let mut got = first.run(&records[..cut]).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_snapshot(&first, 42, &mut buf).map_err(|e| e.to_string())?;
    drop(first);
    let mut resumed = read_snapshot(buf.as_slice()).map_err(|e| e.to_string())?;
    got.extend(resumed.run(&records[cut..]).map_err(|e| e.to_string())?);
    let first_diff = got.iter().zip(&expected).position(|(a, b)| a != b);
    ensure(got.len() == expected.len() && first_diff.is_none(), || {
        format!("verdict streams diverge at {first_diff:?}")
    })?;
    Ok(format!("cut at {cut}, {} verdicts identical, snapshot {} KiB", got.len(), buf.len() / 1024))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("golden trace", golden_trace),
        ("spam-rank closed form", spam_rank_closed_form),
        ("clustering oracle equivalence", clustering_oracle),
        ("self-removal correctness", self_removal),
        ("degenerate omega fidelity", degenerate_omega),
        ("accordance tradeoff shape", accordance_tradeoff),
        ("bin separation", bin_separation),
        ("false-positive correction", false_positive_correction),
        ("beta CV oracle and tau trend", beta_cv_oracle),
        ("throughput floor", throughput_floor),
        ("snapshot round-trip", snapshot_round_trip),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
