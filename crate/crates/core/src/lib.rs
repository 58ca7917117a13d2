//! Streaming spam re-classification driven by the structure of contact lists.
//!
//! Every sender is described by the set of recipients it has written to and
//! every recipient by the set of senders it has heard from. Users with similar
//! contact lists are grouped into clusters on each side, and each cluster
//! carries the average spam frequency of its members as observed through an
//! auxiliary filter's verdicts. A message is then scored from its sender's
//! cluster and its recipients' clusters; confident scores override the
//! auxiliary verdict, uncertain ones defer to it.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingest`] parses log streams into normalized [`MessageRecord`]s.
//! - [`vectorspace`] holds binary contact vectors, cluster sum vectors and the
//!   inverted index used for candidate lookup.
//! - [`clustering`] keeps the sender and recipient cluster sets up to date.
//! - [`scoring`] tracks spam statistics and produces [`Verdict`]s.
//! - [`engine`] ties clustering and scoring into a single-writer state machine.
//! - [`evaluation`] and [`synthgen`] provide the experiment harness.
//! - [`snapshot`] persists engine state.

pub mod clustering;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod report;
pub mod scoring;
pub mod snapshot;
pub mod synthgen;
pub mod vectorspace;

pub use clustering::{ClusterId, ClusteringConfig, SideKind};
pub use engine::{Engine, EngineConfig};
pub use error::{Error, Result};
pub use ingest::{InputFormat, Label, MessageRecord, SenderIdentity};
pub use scoring::{Decision, ScoringConfig, Verdict};
