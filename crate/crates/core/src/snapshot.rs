//! Versioned JSON snapshots of engine state.
//!
//! A snapshot file is a `#` header line followed by one JSON document. The
//! inverted index is not stored; it is rebuilt from the cluster vectors
//! on load. Float caches are written with round-trip precision so a resumed
//! engine produces bit-identical verdicts.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterState;
use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::report::Header;

pub const SNAPSHOT_FORMAT: &str = "spamcluster-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize)]
struct SnapshotRef<'a> {
    format: &'static str,
    version: u32,
    config_fingerprint: String,
    config: &'a EngineConfig,
    messages: u64,
    state: &'a ClusterState,
}

#[derive(Deserialize)]
struct SnapshotOwned {
    format: String,
    version: u32,
    config_fingerprint: String,
    config: EngineConfig,
    messages: u64,
    state: ClusterState,
}

/// `seed` only goes into the header line.
pub fn write_snapshot<W: Write>(engine: &Engine, seed: u64, writer: W) -> Result<()> {
    let (config, state, messages) = engine.parts();
    let snap = SnapshotRef {
        format: SNAPSHOT_FORMAT,
        version: SNAPSHOT_VERSION,
        config_fingerprint: config.fingerprint(),
        config,
        messages,
        state,
    };
    let mut w = BufWriter::new(writer);
    Header::new("snapshot", snap.config_fingerprint.clone(), seed).write(&mut w)?;
    serde_json::to_writer(&mut w, &snap).map_err(|e| Error::Snapshot(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(reader: R) -> Result<Engine> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let body = match text.strip_prefix('#') {
        Some(rest) => rest.split_once('\n').map_or("", |(_, b)| b),
        None => &text,
    };
    let snap: SnapshotOwned = serde_json::from_str(body).map_err(|e| Error::Snapshot(e.to_string()))?;
    if snap.format != SNAPSHOT_FORMAT {
        return Err(Error::Snapshot(format!("not a snapshot: format {:?}", snap.format)));
    }
    if snap.version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported snapshot version {}", snap.version)));
    }
    if snap.config.fingerprint() != snap.config_fingerprint {
        return Err(Error::Snapshot("config fingerprint mismatch".into()));
    }
    snap.config.validate()?;
    let mut state = snap.state;
    state.rebuild_indexes();
    state.validate().map_err(|e| Error::Snapshot(format!("inconsistent state: {e}")))?;
    Ok(Engine::from_parts(snap.config, state, snap.messages))
}

pub fn save(engine: &Engine, seed: u64, path: &Path) -> Result<()> {
    write_snapshot(engine, seed, std::fs::File::create(path)?)
}

pub fn load(path: &Path) -> Result<Engine> {
    read_snapshot(std::fs::File::open(path)?)
}
