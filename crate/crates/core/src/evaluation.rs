//! Experiment harness: τ and ω sweeps, cluster quality, (Ps, Pr) bin grids,
//! the sender-history baseline and the label-noise correction experiment.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{SideKind, SideState};
use crate::engine::{replay, Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::ingest::{Label, MessageRecord};
use crate::scoring::{decide, verdict_from_rank, Decision, SpamStats, Verdict};
use crate::synthgen::Workload;
use crate::vectorspace::{cosine, ClusterVector, UserVector};

/// Agreement between engine decisions and auxiliary labels, over the
/// messages the engine classified itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accordance {
    /// 100 when nothing was classified; check `classified_count`.
    pub accordance_pct: f64,
    pub classified_count: usize,
    pub agreeing: usize,
}

impl Accordance {
    pub fn from_decisions(pairs: impl IntoIterator<Item = (Decision, Label)>) -> Self {
        let mut classified = 0;
        let mut agreeing = 0;
        for (decision, aux) in pairs {
            if let Some(label) = decision.label() {
                classified += 1;
                if label == aux {
                    agreeing += 1;
                }
            }
        }
        let pct = if classified == 0 { 100.0 } else { 100.0 * agreeing as f64 / classified as f64 };
        Self { accordance_pct: pct, classified_count: classified, agreeing }
    }

    pub fn from_verdicts(verdicts: &[Verdict]) -> Self {
        Self::from_decisions(verdicts.iter().map(|v| (v.decision, v.aux_label)))
    }
}

// ---------------------------------------------------------------------------
// beta CV

/// One cluster as seen by [`beta_cv`]: its sum vector and its members.
pub struct ClusterView<'a> {
    pub centroid: &'a ClusterVector,
    pub members: Vec<&'a UserVector>,
}

/// Population coefficient of variation. All-zero samples give 0.
fn coefficient_of_variation(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Some(0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}

/// Intra-cluster CV over member-to-centroid cosine distances divided by the
/// inter-cluster CV over centroid-to-centroid distances. Lower is better.
pub fn beta_cv(clusters: &[ClusterView<'_>]) -> Result<f64> {
    if clusters.len() < 2 {
        return Err(Error::NotComputable("fewer than two clusters"));
    }
    if clusters.iter().all(|c| c.members.len() < 2) {
        return Err(Error::NotComputable("no multi-member cluster"));
    }
    let intra: Vec<f64> =
        clusters.iter().flat_map(|c| c.members.iter().map(move |m| 1.0 - cosine(*m, c.centroid))).collect();
    let mut inter = Vec::with_capacity(clusters.len() * (clusters.len() - 1) / 2);
    for (i, a) in clusters.iter().enumerate() {
        for b in &clusters[i + 1..] {
            inter.push(1.0 - cosine(a.centroid, b.centroid));
        }
    }
    let intra_cv = coefficient_of_variation(&intra).ok_or(Error::NotComputable("no members"))?;
    if intra_cv == 0.0 {
        return Ok(0.0);
    }
    let inter_cv = coefficient_of_variation(&inter).ok_or(Error::NotComputable("no pairs"))?;
    if inter_cv == 0.0 {
        return Err(Error::NotComputable("inter-cluster CV is zero"));
    }
    Ok(intra_cv / inter_cv)
}

pub fn side_beta_cv(side: &SideState) -> Result<f64> {
    let views: Vec<ClusterView<'_>> = side
        .clusters()
        .map(|c| ClusterView {
            centroid: &c.vector,
            members: c.members.iter().map(|&m| &side.users()[m as usize].vector).collect(),
        })
        .collect();
    beta_cv(&views)
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub num_sender_clusters: usize,
    pub num_recipient_clusters: usize,
    pub beta_cv_sender: Option<f64>,
    pub beta_cv_recipient: Option<f64>,
    pub accordance_pct: f64,
    pub classified_count: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Tau,
    Omega,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::Config(format!("grid {text:?}: {msg}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:end:step"));
        }
        let (start, end, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || end < start {
            return Err(bad("need step > 0 and end >= start"));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| round12(start + i as f64 * step)).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    validate_grid(&values)?;
    Ok(values)
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn row_from_engine(value: f64, engine: &Engine, verdicts: &[Verdict], runtime_ms: f64) -> SweepRow {
    let state = engine.state();
    let acc = Accordance::from_verdicts(verdicts);
    SweepRow {
        value,
        num_sender_clusters: state.side(SideKind::Sender).num_clusters(),
        num_recipient_clusters: state.side(SideKind::Recipient).num_clusters(),
        beta_cv_sender: side_beta_cv(state.side(SideKind::Sender)).ok(),
        beta_cv_recipient: side_beta_cv(state.side(SideKind::Recipient)).ok(),
        accordance_pct: acc.accordance_pct,
        classified_count: acc.classified_count,
        runtime_ms,
    }
}

/// One full replay per τ, each from an empty state; grid points run in
/// parallel.
pub fn tau_sweep(records: &[MessageRecord], base: EngineConfig, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    let rows = grid
        .par_iter()
        .map(|&tau| {
            let config = EngineConfig { tau, ..base };
            let start = Instant::now();
            let (engine, verdicts) = replay(config, records)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(row_from_engine(tau, &engine, &verdicts, ms))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { parameter: SweepParameter::Tau, rows })
}

/// Per-message scores, independent of ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTrace {
    pub p_s: f64,
    pub p_r: f64,
    pub spam_rank: f64,
    pub aux: Label,
}

/// ω only selects the decision branch and never feeds back into state, so
/// one replay serves every grid value.
pub fn omega_sweep(records: &[MessageRecord], base: EngineConfig, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    for &omega in grid {
        EngineConfig { omega, ..base }.validate()?;
    }
    let start = Instant::now();
    let (engine, verdicts) = replay(base, records)?;
    let replay_ms = start.elapsed().as_secs_f64() * 1e3;
    let trace: Vec<ScoreTrace> = verdicts
        .iter()
        .map(|v| ScoreTrace { p_s: v.p_s, p_r: v.p_r, spam_rank: v.spam_rank, aux: v.aux_label })
        .collect();
    let template = row_from_engine(base.omega, &engine, &verdicts, replay_ms);
    let rows = grid
        .iter()
        .map(|&omega| {
            let acc = Accordance::from_decisions(trace.iter().map(|t| (decide(t.spam_rank, omega), t.aux)));
            SweepRow {
                value: omega,
                accordance_pct: acc.accordance_pct,
                classified_count: acc.classified_count,
                ..template.clone()
            }
        })
        .collect();
    Ok(SweepResult { parameter: SweepParameter::Omega, rows })
}

/// Reference implementation of [`omega_sweep`] with a full replay per ω.
pub fn omega_sweep_naive(records: &[MessageRecord], base: EngineConfig, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    let rows = grid
        .iter()
        .map(|&omega| {
            let start = Instant::now();
            let (engine, verdicts) = replay(EngineConfig { omega, ..base }, records)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(row_from_engine(omega, &engine, &verdicts, ms))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { parameter: SweepParameter::Omega, rows })
}

/// Re-derives verdicts for another ω from recorded scores.
pub fn rescore(verdicts: &[Verdict], omega: f64) -> Vec<Verdict> {
    verdicts.iter().map(|v| verdict_from_rank(&v.msg_id, v.p_s, v.p_r, v.spam_rank, v.aux_label, omega)).collect()
}

// ---------------------------------------------------------------------------
// (Ps, Pr) bins

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCell {
    pub message_count: usize,
    pub spam_count: usize,
}

impl BinCell {
    pub fn spam_fraction(&self) -> Option<f64> {
        (self.message_count > 0).then(|| self.spam_count as f64 / self.message_count as f64)
    }
}

/// Square grid over `(P_s, P_r)`; `cells[i][j]` covers
/// `P_s ∈ [i·b, (i+1)·b)` and `P_r ∈ [j·b, (j+1)·b)`, with 1 folded into
/// the top bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub bin_size: f64,
    pub bins: usize,
    pub cells: Vec<Vec<BinCell>>,
}

impl BinGrid {
    pub fn new(bin_size: f64) -> Result<Self> {
        if !(bin_size > 0.0 && bin_size <= 1.0) {
            return Err(Error::Config(format!("bin size {bin_size} outside (0, 1]")));
        }
        let bins = (1.0 / bin_size).round();
        if (bins * bin_size - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("bin size {bin_size} does not divide 1")));
        }
        let bins = bins as usize;
        Ok(Self { bin_size, bins, cells: vec![vec![BinCell::default(); bins]; bins] })
    }

    pub fn cell_of(&self, p: f64) -> usize {
        ((p * self.bins as f64 + 1e-9).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn add(&mut self, p_s: f64, p_r: f64, spam: bool) {
        let (i, j) = (self.cell_of(p_s), self.cell_of(p_r));
        let cell = &mut self.cells[i][j];
        cell.message_count += 1;
        cell.spam_count += spam as usize;
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.message_count).sum()
    }

    /// Mean spam fraction of the three non-degenerate cells touching the
    /// (1, 1) corner minus that of the three touching (0, 0); empty cells
    /// are left out of each mean.
    pub fn corner_separation(&self) -> Option<f64> {
        let n = self.bins;
        if n < 2 {
            return None;
        }
        let mean = |cells: [(usize, usize); 3]| {
            let fr: Vec<f64> = cells.iter().filter_map(|&(i, j)| self.cells[i][j].spam_fraction()).collect();
            (!fr.is_empty()).then(|| fr.iter().sum::<f64>() / fr.len() as f64)
        };
        let high = mean([(n - 1, n - 1), (n - 1, n - 2), (n - 2, n - 1)])?;
        let low = mean([(0, 0), (0, 1), (1, 0)])?;
        Some(high - low)
    }
}

/// Bins verdicts by `(P_s, P_r)`, counting spam by auxiliary label.
pub fn bin_heatmap(verdicts: &[Verdict], bin_size: f64) -> Result<BinGrid> {
    let mut grid = BinGrid::new(bin_size)?;
    for v in verdicts {
        grid.add(v.p_s, v.p_r, v.aux_label.is_spam());
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// sender-history baseline

/// Classifies each message from its sender's past spam frequency alone:
/// spam above 0.5, legitimate below, deferred at exactly 0.5 or for an
/// unseen sender. History is updated after scoring.
pub fn sender_history_decisions(records: &[MessageRecord]) -> Vec<Decision> {
    let mut history: HashMap<&str, SpamStats> = HashMap::new();
    records
        .iter()
        .map(|r| {
            let stats = history.entry(r.sender.as_str()).or_default();
            let decision = match stats.frequency() {
                Some(f) if f > 0.5 => Decision::Spam,
                Some(f) if f < 0.5 => Decision::Legitimate,
                _ => Decision::Deferred,
            };
            stats.record(r.aux_label);
            decision
        })
        .collect()
}

pub fn sender_history_baseline(records: &[MessageRecord]) -> Accordance {
    let decisions = sender_history_decisions(records);
    Accordance::from_decisions(decisions.into_iter().zip(records.iter().map(|r| r.aux_label)))
}

// ---------------------------------------------------------------------------
// label noise

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub flip_rate: f64,
    pub messages: usize,
    pub classified_count: usize,
    pub aux_error_rate: f64,
    pub engine_error_rate: f64,
    /// Ham, auxiliary said spam, engine said legitimate.
    pub fp_corrected: usize,
    /// Ham, auxiliary said ham, engine said spam.
    pub fp_introduced: usize,
    /// Spam, auxiliary said ham, engine said spam.
    pub fn_corrected: usize,
    /// Spam, auxiliary said spam, engine said legitimate.
    pub fn_introduced: usize,
}

/// Compares auxiliary and engine labels against ground truth.
pub fn noise_report(flip_rate: f64, truth: &[Label], verdicts: &[Verdict]) -> Result<NoiseReport> {
    if truth.len() != verdicts.len() {
        return Err(Error::Config("truth and verdict streams differ in length".into()));
    }
    let mut r = NoiseReport {
        flip_rate,
        messages: truth.len(),
        classified_count: 0,
        aux_error_rate: 0.0,
        engine_error_rate: 0.0,
        fp_corrected: 0,
        fp_introduced: 0,
        fn_corrected: 0,
        fn_introduced: 0,
    };
    let (mut aux_err, mut eng_err) = (0usize, 0usize);
    for (&t, v) in truth.iter().zip(verdicts) {
        aux_err += (v.aux_label != t) as usize;
        eng_err += (v.effective_label != t) as usize;
        r.classified_count += v.classified() as usize;
        match (t, v.aux_label, v.decision) {
            (Label::Ham, Label::Spam, Decision::Legitimate) => r.fp_corrected += 1,
            (Label::Ham, Label::Ham, Decision::Spam) => r.fp_introduced += 1,
            (Label::Spam, Label::Ham, Decision::Spam) => r.fn_corrected += 1,
            (Label::Spam, Label::Spam, Decision::Legitimate) => r.fn_introduced += 1,
            _ => {}
        }
    }
    if !truth.is_empty() {
        r.aux_error_rate = aux_err as f64 / truth.len() as f64;
        r.engine_error_rate = eng_err as f64 / truth.len() as f64;
    }
    Ok(r)
}

/// Re-labels the workload with `flip_rate` noise, runs the engine on the
/// noisy labels and scores both against ground truth.
pub fn noise_correction_experiment(
    workload: &Workload,
    flip_rate: f64,
    seed: u64,
    config: EngineConfig,
) -> Result<NoiseReport> {
    let noisy = workload.with_flip_rate(flip_rate, seed)?;
    let records = noisy.records(config.sender_identity);
    let (_, verdicts) = replay(config, &records)?;
    noise_report(flip_rate, &noisy.truth(), &verdicts)
}
