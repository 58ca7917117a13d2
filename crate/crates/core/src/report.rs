//! Plain-text and JSON-lines report writers. Every file starts with a `#`
//! header line carrying the tool version, a config fingerprint and the seed.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{BinGrid, SweepResult};
use crate::scoring::Verdict;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub command: String,
    pub fingerprint: String,
    pub seed: u64,
}

impl Header {
    pub fn new(command: &str, fingerprint: impl Into<String>, seed: u64) -> Self {
        Self { command: command.to_owned(), fingerprint: fingerprint.into(), seed }
    }

    pub fn line(&self) -> String {
        format!(
            "# spamcluster {TOOL_VERSION} command={} fingerprint={} seed={}",
            self.command, self.fingerprint, self.seed
        )
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", self.line())?;
        Ok(())
    }
}

pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_verdicts<W: Write>(w: &mut W, verdicts: &[Verdict]) -> Result<()> {
    for v in verdicts {
        write_json_line(w, v)?;
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into())
}

pub fn write_sweep_tsv<W: Write>(w: &mut W, sweep: &SweepResult) -> Result<()> {
    let name = match sweep.parameter {
        crate::evaluation::SweepParameter::Tau => "tau",
        crate::evaluation::SweepParameter::Omega => "omega",
    };
    writeln!(
        w,
        "{name}\tnum_sender_clusters\tnum_recipient_clusters\tbeta_cv_sender\tbeta_cv_recipient\taccordance_pct\tclassified_count\truntime_ms"
    )?;
    for r in &sweep.rows {
        writeln!(
            w,
            "{:.4}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{:.1}",
            r.value,
            r.num_sender_clusters,
            r.num_recipient_clusters,
            opt(r.beta_cv_sender),
            opt(r.beta_cv_recipient),
            r.accordance_pct,
            r.classified_count,
            r.runtime_ms
        )?;
    }
    Ok(())
}

pub fn write_sweep_jsonl<W: Write>(w: &mut W, sweep: &SweepResult) -> Result<()> {
    for r in &sweep.rows {
        write_json_line(w, r)?;
    }
    Ok(())
}

/// Rows are `P_s` bins, columns `P_r` bins; each cell is `spam/total`.
pub fn write_bins_tsv<W: Write>(w: &mut W, grid: &BinGrid) -> Result<()> {
    let header: Vec<String> = (0..grid.bins).map(|j| format!("pr{:.2}", j as f64 * grid.bin_size)).collect();
    writeln!(w, "ps\\pr\t{}", header.join("\t"))?;
    for (i, row) in grid.cells.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{}/{}", c.spam_count, c.message_count)).collect();
        writeln!(w, "ps{:.2}\t{}", i as f64 * grid.bin_size, cells.join("\t"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BinLine {
    ps_bin: usize,
    pr_bin: usize,
    ps_low: f64,
    pr_low: f64,
    message_count: usize,
    spam_count: usize,
    spam_fraction: Option<f64>,
}

pub fn write_bins_jsonl<W: Write>(w: &mut W, grid: &BinGrid) -> Result<()> {
    for (i, row) in grid.cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            write_json_line(
                w,
                &BinLine {
                    ps_bin: i,
                    pr_bin: j,
                    ps_low: i as f64 * grid.bin_size,
                    pr_low: j as f64 * grid.bin_size,
                    message_count: c.message_count,
                    spam_count: c.spam_count,
                    spam_fraction: c.spam_fraction(),
                },
            )?;
        }
    }
    Ok(())
}
