//! Log-stream parsing and identity normalization.
//!
//! Two line formats are accepted:
//!
//! - JSON lines: `{"id": "m1", "ts": 1074470400, "from": "user@dom.com",
//!   "to": ["a@x.br", "b@x.br"], "aux": "spam"}`; `id` is optional and unknown
//!   fields (such as the generator's `truth`) are ignored by the engine.
//! - Tab-delimited text: `ts<TAB>from<TAB>to1,to2,...<TAB>spam|ham`.
//!
//! Blank lines and lines starting with `#` are skipped. Malformed lines are
//! counted and skipped; a stream where more than half of the candidate lines
//! are malformed is rejected as a likely format mismatch.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary message label, used both for the auxiliary verdict and for
/// generator ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Spam,
    Ham,
}

impl Label {
    pub fn is_spam(self) -> bool {
        self == Label::Spam
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Spam => Label::Ham,
            Label::Ham => Label::Spam,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Spam => "spam",
            Label::Ham => "ham",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spam" => Ok(Label::Spam),
            "ham" => Ok(Label::Ham),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

/// How sender addresses are turned into sender identities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenderIdentity {
    /// Keep only the domain part; spammers rotate user names freely.
    #[default]
    Domain,
    /// Keep the full lower-cased address.
    Full,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFormat {
    #[default]
    JsonLines,
    DelimitedText,
}

/// One log line as it appears on disk, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub ts: i64,
    pub from: String,
    pub to: Vec<String>,
    pub aux: Label,
    /// Ground truth emitted by the workload generator. Never read by the engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Label>,
}

/// A normalized message event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub msg_id: String,
    pub timestamp: i64,
    pub sender: String,
    pub recipients: Vec<String>,
    pub aux_label: Label,
}

/// Extract the sender identity: the lower-cased text after the last `@`, or
/// the whole string when it is already a bare domain.
pub fn normalize_sender(address: &str) -> Result<String> {
    let trimmed = address.trim();
    let domain = match trimmed.rfind('@') {
        Some(at) => &trimmed[at + 1..],
        None => trimmed,
    };
    if domain.is_empty() {
        return Err(Error::InvalidAddress(address.to_owned()));
    }
    Ok(domain.to_lowercase())
}

pub fn normalize_sender_with(address: &str, identity: SenderIdentity) -> Result<String> {
    match identity {
        SenderIdentity::Domain => normalize_sender(address),
        SenderIdentity::Full => {
            let full = address.trim().to_lowercase();
            if full.is_empty() {
                return Err(Error::InvalidAddress(address.to_owned()));
            }
            Ok(full)
        }
    }
}

/// Recipients are identified by their full lower-cased address.
pub fn normalize_recipient(address: &str) -> Result<String> {
    let trimmed = address.trim();
    if trimmed.is_empty() || !trimmed.contains('@') {
        return Err(Error::InvalidAddress(address.to_owned()));
    }
    Ok(trimmed.to_lowercase())
}

impl RawLogRecord {
    /// Normalize identities and collapse duplicate recipients, keeping the
    /// first occurrence of each.
    pub fn normalize(&self, identity: SenderIdentity, line_no: usize) -> Result<MessageRecord> {
        if self.to.is_empty() {
            return Err(Error::Format("empty recipient list".into()));
        }
        let sender = normalize_sender_with(&self.from, identity)?;
        let mut seen = HashSet::with_capacity(self.to.len());
        let mut recipients = Vec::with_capacity(self.to.len());
        for addr in &self.to {
            let r = normalize_recipient(addr)?;
            if seen.insert(r.clone()) {
                recipients.push(r);
            }
        }
        let msg_id = match &self.id {
            Some(id) if !id.is_empty() => id.clone(),
            _ => format!("msg-{line_no}"),
        };
        Ok(MessageRecord { msg_id, timestamp: self.ts, sender, recipients, aux_label: self.aux })
    }
}

/// Parse one delimited-text line into its raw fields.
fn parse_delimited(line: &str) -> Result<RawLogRecord> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(Error::Format(format!("expected 4 tab-separated fields, got {}", cols.len())));
    }
    let ts = cols[0].trim().parse::<i64>().map_err(|e| Error::Format(format!("bad timestamp: {e}")))?;
    let to = cols[2].split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect();
    Ok(RawLogRecord { id: None, ts, from: cols[1].to_owned(), to, aux: cols[3].parse()?, truth: None })
}

pub fn parse_raw_line(line: &str, format: InputFormat) -> Result<RawLogRecord> {
    match format {
        InputFormat::JsonLines => serde_json::from_str(line).map_err(|e| Error::Format(e.to_string())),
        InputFormat::DelimitedText => parse_delimited(line),
    }
}

/// Line counters kept while reading a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseCounts {
    pub lines: usize,
    pub records: usize,
    /// Lines that looked like records but failed to parse or normalize.
    pub malformed: usize,
    /// Blank and `#` comment lines.
    pub ignored: usize,
}

impl ParseCounts {
    /// Every non-record line.
    pub fn skipped(&self) -> usize {
        self.malformed + self.ignored
    }

    fn check_ratio(&self) -> Result<()> {
        let candidates = self.records + self.malformed;
        if candidates > 0 && self.malformed * 2 > candidates {
            return Err(Error::Format(format!(
                "{} of {} lines malformed; wrong input format?",
                self.malformed, candidates
            )));
        }
        Ok(())
    }
}

/// Order-preserving reader over a line stream. Yields each well-formed record
/// together with its optional ground-truth side channel.
pub struct StreamParser<R> {
    reader: R,
    format: InputFormat,
    identity: SenderIdentity,
    counts: ParseCounts,
    buf: String,
}

impl<R: BufRead> StreamParser<R> {
    pub fn new(reader: R, format: InputFormat, identity: SenderIdentity) -> Self {
        Self { reader, format, identity, counts: ParseCounts::default(), buf: String::new() }
    }

    pub fn counts(&self) -> ParseCounts {
        self.counts
    }

    /// Fails with a format error when more than half the lines seen so far
    /// were malformed.
    pub fn finish(self) -> Result<ParseCounts> {
        self.counts.check_ratio()?;
        Ok(self.counts)
    }
}

impl<R: BufRead> Iterator for StreamParser<R> {
    type Item = Result<(MessageRecord, Option<Label>)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::Io(e))),
            }
            self.counts.lines += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.starts_with('#') {
                self.counts.ignored += 1;
                continue;
            }
            let parsed = parse_raw_line(line, self.format)
                .and_then(|raw| Ok((raw.normalize(self.identity, self.counts.lines)?, raw.truth)));
            match parsed {
                Ok(item) => {
                    self.counts.records += 1;
                    return Some(Ok(item));
                }
                Err(_) => self.counts.malformed += 1,
            }
        }
    }
}

/// A fully read stream.
#[derive(Debug, Clone, Default)]
pub struct ParsedStream {
    pub records: Vec<MessageRecord>,
    /// Ground-truth labels parallel to `records`, when the source carried them.
    pub truth: Vec<Option<Label>>,
    pub counts: ParseCounts,
}

impl ParsedStream {
    pub fn skipped(&self) -> usize {
        self.counts.skipped()
    }
}

pub fn parse_stream<R: BufRead>(reader: R, format: InputFormat, identity: SenderIdentity) -> Result<ParsedStream> {
    let mut parser = StreamParser::new(reader, format, identity);
    let mut out = ParsedStream::default();
    for item in parser.by_ref() {
        let (record, truth) = item?;
        out.records.push(record);
        out.truth.push(truth);
    }
    out.counts = parser.finish()?;
    Ok(out)
}
