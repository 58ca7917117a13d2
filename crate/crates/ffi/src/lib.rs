//! C ABI over the spamcluster engine.
//!
//! Engines are opaque handles created by `sc_engine_new` or
//! `sc_engine_load` and released with `sc_engine_free`. Every fallible call
//! returns an `ScStatus`; on failure `sc_last_error_message` describes the
//! most recent error on the calling thread. Strings returned by the library
//! are released with `sc_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spamcluster::ingest::{normalize_sender_with, parse_raw_line, RawLogRecord};
use spamcluster::scoring::spam_rank;
use spamcluster::{snapshot, Decision, Engine, EngineConfig, Error, InputFormat, Label, SenderIdentity, Verdict};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Snapshot = 6,
    Domain = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScDecision {
    Spam = 0,
    Legitimate = 1,
    Deferred = 2,
}

/// Engine parameters. Obtain defaults from `sc_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScConfig {
    pub tau: f64,
    pub omega: f64,
    /// Use the full sender address instead of its domain.
    pub full_sender_identity: bool,
    pub assign_before_update: bool,
    pub score_before_update: bool,
}

/// Per-message result.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScVerdict {
    pub p_s: f64,
    pub p_r: f64,
    pub spam_rank: f64,
    pub decision: ScDecision,
    /// Final label: the decision when classified, else the auxiliary label.
    pub effective_is_spam: bool,
}

/// Opaque engine handle.
pub struct ScEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> ScStatus {
    match err {
        Error::Config(_) => ScStatus::Config,
        Error::Io(_) => ScStatus::Io,
        Error::Format(_) | Error::InvalidAddress(_) => ScStatus::Format,
        Error::Snapshot(_) => ScStatus::Snapshot,
        Error::Domain(_) | Error::NotComputable(_) => ScStatus::Domain,
        Error::UnknownUser(_) | Error::NotAMember { .. } | Error::InternalState(_) => ScStatus::Internal,
    }
}

struct Fail(ScStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside spamcluster");
            ScStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ScStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(ScStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn engine_ref<'a>(p: *const ScEngine) -> Result<&'a ScEngine, Fail> {
    p.as_ref().ok_or_else(|| null("engine"))
}

unsafe fn engine_mut<'a>(p: *mut ScEngine) -> Result<&'a mut ScEngine, Fail> {
    p.as_mut().ok_or_else(|| null("engine"))
}

fn to_c(v: &Verdict) -> ScVerdict {
    ScVerdict {
        p_s: v.p_s,
        p_r: v.p_r,
        spam_rank: v.spam_rank,
        decision: match v.decision {
            Decision::Spam => ScDecision::Spam,
            Decision::Legitimate => ScDecision::Legitimate,
            Decision::Deferred => ScDecision::Deferred,
        },
        effective_is_spam: v.effective_label.is_spam(),
    }
}

fn engine_config(c: &ScConfig) -> EngineConfig {
    EngineConfig {
        tau: c.tau,
        omega: c.omega,
        sender_identity: if c.full_sender_identity { SenderIdentity::Full } else { SenderIdentity::Domain },
        assign_before_update: c.assign_before_update,
        score_before_update: c.score_before_update,
    }
}

#[no_mangle]
pub extern "C" fn sc_config_default() -> ScConfig {
    let d = EngineConfig::default();
    ScConfig {
        tau: d.tau,
        omega: d.omega,
        full_sender_identity: d.sender_identity == SenderIdentity::Full,
        assign_before_update: d.assign_before_update,
        score_before_update: d.score_before_update,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an engine. `config` may be NULL for defaults.
///
/// # Safety
/// `config` is NULL or points to a valid `ScConfig`; `out` is a valid
/// pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_new(config: *const ScConfig, out: *mut *mut ScEngine) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = config.as_ref().map_or_else(EngineConfig::default, engine_config);
        let engine = Engine::new(config)?;
        *out = Box::into_raw(Box::new(ScEngine { inner: engine }));
        Ok(())
    })
}

/// Releases an engine. NULL is ignored.
///
/// # Safety
/// `engine` is NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_free(engine: *mut ScEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Processes one message given as raw addresses. `msg_id` may be NULL.
///
/// # Safety
/// `engine` is a live handle; `sender` and each of the `n_recipients`
/// entries of `recipients` are NUL-terminated strings; `out` is NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_process(
    engine: *mut ScEngine,
    msg_id: *const c_char,
    sender: *const c_char,
    recipients: *const *const c_char,
    n_recipients: usize,
    aux_is_spam: bool,
    out: *mut ScVerdict,
) -> ScStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        if recipients.is_null() && n_recipients > 0 {
            return Err(null("recipients"));
        }
        let id = if msg_id.is_null() { None } else { Some(str_arg(msg_id, "msg_id")?.to_owned()) };
        let mut to = Vec::with_capacity(n_recipients);
        for i in 0..n_recipients {
            to.push(str_arg(*recipients.add(i), "recipient")?.to_owned());
        }
        let raw = RawLogRecord {
            id,
            ts: 0,
            from: str_arg(sender, "sender")?.to_owned(),
            to,
            aux: if aux_is_spam { Label::Spam } else { Label::Ham },
            truth: None,
        };
        process_raw(engine, &raw, out)
    })
}

/// Processes one JSON log line.
///
/// # Safety
/// `engine` is a live handle; `line` is a NUL-terminated string; `out` is
/// NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_process_json(
    engine: *mut ScEngine,
    line: *const c_char,
    out: *mut ScVerdict,
) -> ScStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let raw = parse_raw_line(str_arg(line, "line")?, InputFormat::JsonLines)?;
        process_raw(engine, &raw, out)
    })
}

unsafe fn process_raw(engine: &mut ScEngine, raw: &RawLogRecord, out: *mut ScVerdict) -> Result<(), Fail> {
    let identity = engine.inner.config().sender_identity;
    let line_no = engine.inner.messages_processed() as usize + 1;
    let record = raw.normalize(identity, line_no)?;
    let verdict = engine.inner.process(&record)?;
    if !out.is_null() {
        *out = to_c(&verdict);
    }
    Ok(())
}

/// # Safety
/// `engine` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_messages_processed(engine: *const ScEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.inner.messages_processed())
}

/// Current number of sender and recipient clusters.
///
/// # Safety
/// `engine` is a live handle; the output pointers are NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_cluster_counts(
    engine: *const ScEngine,
    senders: *mut usize,
    recipients: *mut usize,
) -> ScStatus {
    guard(|| {
        let state = engine_ref(engine)?.inner.state();
        if !senders.is_null() {
            *senders = state.sender_side.num_clusters();
        }
        if !recipients.is_null() {
            *recipients = state.recipient_side.num_clusters();
        }
        Ok(())
    })
}

/// Writes the engine state to `path`.
///
/// # Safety
/// `engine` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_save(engine: *const ScEngine, path: *const c_char) -> ScStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        snapshot::save(&engine.inner, 0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Loads an engine saved by `sc_engine_save` or the command-line tool.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sc_engine_load(path: *const c_char, out: *mut *mut ScEngine) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let engine = snapshot::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(ScEngine { inner: engine }));
        Ok(())
    })
}

/// Spam rank of a (P_s, P_r) pair; both must lie in [0, 1].
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sc_spam_rank(p_s: f64, p_r: f64, out: *mut f64) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = spam_rank(p_s, p_r)?;
        Ok(())
    })
}

/// Normalized sender identity of `address`. The result is freed with
/// `sc_string_free`.
///
/// # Safety
/// `address` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sc_normalize_sender(
    address: *const c_char,
    full_identity: bool,
    out: *mut *mut c_char,
) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let identity = if full_identity { SenderIdentity::Full } else { SenderIdentity::Domain };
        let s = normalize_sender_with(str_arg(address, "address")?, identity)?;
        *out = CString::new(s).map_err(|_| Fail(ScStatus::Format, "NUL in address".into()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` is NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
