//! Append-only, SHA-256 hash-chained audit log.
//!
//! # Byte layout
//!
//! Every entry is stored as one record:
//!
//! ```text
//! record    := len:u32be  prev_hash[32]  canonical  entry_hash[32]
//! canonical := seq:u64be  timestamp_us:i64be  principal  action  resource_ref  outcome
//! string    := len:u32be  utf8-bytes
//! ```
//!
//! `len` counts the bytes after itself. `entry_hash = SHA-256(prev_hash ||
//! canonical)` and entry 0 chains from 32 zero bytes. `action` is the variant
//! name (`Ingest`, `Cleared`, ...). The file is a plain concatenation of
//! records, so any tool that can read big-endian integers can re-verify it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{to_micros, Clock, SystemClock};
use crate::storage::{put_str, AppendSink, FileSink, MemorySink, Reader};

pub const GENESIS_HASH: [u8; 32] = [0u8; 32];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit storage failure: {0}")]
    StorageFailure(String),
    #[error("audit log is corrupt at seq {0}")]
    Corrupt(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuditAction {
    Ingest,
    Cleared,
    Quarantined,
    ReviewEdit,
    Approve,
    Reject,
    Reidentify,
    Login,
    LoginFailed,
    PolicyDeny,
    ObjectPut,
    ObjectGet,
    ObjectDelete,
    /// Read-only API access (queue listings, audit reads, policy dry runs).
    Access,
    VaultExport,
    VaultImport,
}

impl AuditAction {
    pub const ALL: [AuditAction; 16] = [
        AuditAction::Ingest,
        AuditAction::Cleared,
        AuditAction::Quarantined,
        AuditAction::ReviewEdit,
        AuditAction::Approve,
        AuditAction::Reject,
        AuditAction::Reidentify,
        AuditAction::Login,
        AuditAction::LoginFailed,
        AuditAction::PolicyDeny,
        AuditAction::ObjectPut,
        AuditAction::ObjectGet,
        AuditAction::ObjectDelete,
        AuditAction::Access,
        AuditAction::VaultExport,
        AuditAction::VaultImport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuditAction::Ingest => "Ingest",
            AuditAction::Cleared => "Cleared",
            AuditAction::Quarantined => "Quarantined",
            AuditAction::ReviewEdit => "ReviewEdit",
            AuditAction::Approve => "Approve",
            AuditAction::Reject => "Reject",
            AuditAction::Reidentify => "Reidentify",
            AuditAction::Login => "Login",
            AuditAction::LoginFailed => "LoginFailed",
            AuditAction::PolicyDeny => "PolicyDeny",
            AuditAction::ObjectPut => "ObjectPut",
            AuditAction::ObjectGet => "ObjectGet",
            AuditAction::ObjectDelete => "ObjectDelete",
            AuditAction::Access => "Access",
            AuditAction::VaultExport => "VaultExport",
            AuditAction::VaultImport => "VaultImport",
        }
    }
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuditAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AuditAction::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// The caller-supplied part of an entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub principal: String,
    pub action: AuditAction,
    pub resource_ref: String,
    pub outcome: String,
}

impl AuditEvent {
    pub fn new(
        principal: impl Into<String>,
        action: AuditAction,
        resource_ref: impl Into<String>,
        outcome: impl Into<String>,
    ) -> Self {
        AuditEvent {
            principal: principal.into(),
            action,
            resource_ref: resource_ref.into(),
            outcome: outcome.into(),
        }
    }
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        bytes.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub principal: String,
    pub action: AuditAction,
    pub resource_ref: String,
    pub outcome: String,
    #[serde(with = "hex32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex32")]
    pub entry_hash: [u8; 32],
}

impl AuditEntry {
    /// Fixed-order encoding of every field except the two hashes.
    pub fn canonical_encoding(
        seq: u64,
        timestamp: DateTime<Utc>,
        principal: &str,
        action: AuditAction,
        resource_ref: &str,
        outcome: &str,
    ) -> Vec<u8> {
        let mut buf = Vec::with_capacity(48 + principal.len() + resource_ref.len() + outcome.len());
        buf.extend_from_slice(&seq.to_be_bytes());
        buf.extend_from_slice(&timestamp.timestamp_micros().to_be_bytes());
        put_str(&mut buf, principal);
        put_str(&mut buf, action.as_str());
        put_str(&mut buf, resource_ref);
        put_str(&mut buf, outcome);
        buf
    }

    pub fn compute_hash(prev_hash: &[u8; 32], canonical: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(prev_hash);
        h.update(canonical);
        h.finalize().into()
    }

    fn canonical(&self) -> Vec<u8> {
        Self::canonical_encoding(
            self.seq,
            self.timestamp,
            &self.principal,
            self.action,
            &self.resource_ref,
            &self.outcome,
        )
    }

    pub fn encode_record(&self) -> Vec<u8> {
        let canonical = self.canonical();
        let mut out = Vec::with_capacity(4 + 64 + canonical.len());
        out.extend_from_slice(&((64 + canonical.len()) as u32).to_be_bytes());
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&canonical);
        out.extend_from_slice(&self.entry_hash);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub first_bad_seq: Option<u64>,
    /// Entries that verified before the first failure (all of them when ok).
    pub verified: u64,
}

/// Decodes one record body (after the length prefix). `None` when the bytes do
/// not form a well-shaped record.
fn decode_record(body: &[u8]) -> Option<AuditEntry> {
    if body.len() < 64 {
        return None;
    }
    let prev_hash: [u8; 32] = body[..32].try_into().ok()?;
    let entry_hash: [u8; 32] = body[body.len() - 32..].try_into().ok()?;
    let mut r = Reader::new(&body[32..body.len() - 32]);
    let seq = r.u64()?;
    let timestamp = DateTime::from_timestamp_micros(r.i64()?)?;
    let principal = r.string()?.to_string();
    let action = r.string()?.parse().ok()?;
    let resource_ref = r.string()?.to_string();
    let outcome = r.string()?.to_string();
    if r.remaining() != 0 {
        return None;
    }
    Some(AuditEntry { seq, timestamp, principal, action, resource_ref, outcome, prev_hash, entry_hash })
}

/// Walks the records in `bytes`, checking lengths, sequence numbers and every link.
pub fn verify_bytes(bytes: &[u8]) -> VerifyReport {
    let (entries, bad) = decode_chain(bytes);
    VerifyReport { ok: bad.is_none(), first_bad_seq: bad, verified: entries.len() as u64 }
}

/// Decodes records up to the first invalid one; returns the valid prefix and
/// the seq of the first failure.
fn decode_chain(bytes: &[u8]) -> (Vec<AuditEntry>, Option<u64>) {
    let mut entries = Vec::new();
    let mut prev = GENESIS_HASH;
    let mut r = Reader::new(bytes);
    while r.remaining() > 0 {
        let expected_seq = entries.len() as u64;
        let Some(len) = r.u32() else { return (entries, Some(expected_seq)) };
        let Some(body) = r.take(len as usize) else { return (entries, Some(expected_seq)) };
        let Some(entry) = decode_record(body) else { return (entries, Some(expected_seq)) };
        let canonical = &body[32..body.len() - 32];
        if entry.seq != expected_seq
            || entry.prev_hash != prev
            || AuditEntry::compute_hash(&entry.prev_hash, canonical) != entry.entry_hash
        {
            return (entries, Some(expected_seq));
        }
        prev = entry.entry_hash;
        entries.push(entry);
    }
    (entries, None)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    pub principal: Option<String>,
    pub action: Option<AuditAction>,
    /// Inclusive bounds.
    pub seq_from: Option<u64>,
    pub seq_to: Option<u64>,
}

impl AuditFilter {
    pub fn matches(&self, e: &AuditEntry) -> bool {
        self.principal.as_ref().is_none_or(|p| p == &e.principal)
            && self.action.is_none_or(|a| a == e.action)
            && self.seq_from.is_none_or(|s| e.seq >= s)
            && self.seq_to.is_none_or(|s| e.seq <= s)
    }
}

struct LogState {
    entries: Vec<AuditEntry>,
    sink: Box<dyn AppendSink>,
}

/// Single-writer audit log. Appends are serialized and reach the sink before
/// `append` returns.
pub struct AuditLog {
    state: Mutex<LogState>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog").field("len", &self.len()).finish()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::with_sink(Vec::new(), Box::new(MemorySink), Arc::new(SystemClock))
    }

    /// Opens (or creates) a log file. A file whose chain does not verify is refused.
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, AuditError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(AuditError::StorageFailure(e.to_string())),
        };
        let (entries, bad) = decode_chain(&bytes);
        if let Some(seq) = bad {
            return Err(AuditError::Corrupt(seq));
        }
        let sink = FileSink::open(path).map_err(|e| AuditError::StorageFailure(e.to_string()))?;
        Ok(Self::with_sink(entries, Box::new(sink), clock))
    }

    pub fn with_sink(entries: Vec<AuditEntry>, sink: Box<dyn AppendSink>, clock: Arc<dyn Clock>) -> Self {
        AuditLog { state: Mutex::new(LogState { entries, sink }), clock }
    }

    pub fn append(&self, event: AuditEvent) -> Result<AuditEntry, AuditError> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let seq = state.entries.len() as u64;
        let prev_hash = state.entries.last().map_or(GENESIS_HASH, |e| e.entry_hash);
        let timestamp = to_micros(self.clock.now());
        let canonical = AuditEntry::canonical_encoding(
            seq,
            timestamp,
            &event.principal,
            event.action,
            &event.resource_ref,
            &event.outcome,
        );
        let entry = AuditEntry {
            seq,
            timestamp,
            principal: event.principal,
            action: event.action,
            resource_ref: event.resource_ref,
            outcome: event.outcome,
            prev_hash,
            entry_hash: AuditEntry::compute_hash(&prev_hash, &canonical),
        };
        state
            .sink
            .append(&entry.encode_record())
            .map_err(|e| AuditError::StorageFailure(e.to_string()))?;
        state.entries.push(entry.clone());
        Ok(entry)
    }

    /// Appends events in order, stopping at the first failure.
    pub fn append_all(&self, events: impl IntoIterator<Item = AuditEvent>) -> Result<Vec<AuditEntry>, AuditError> {
        events.into_iter().map(|e| self.append(e)).collect()
    }

    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditEntry> {
        let state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state.entries.iter().filter(|e| filter.matches(e)).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The on-disk encoding of the whole log.
    pub fn encoded(&self) -> Vec<u8> {
        let state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state.entries.iter().flat_map(AuditEntry::encode_record).collect()
    }

    pub fn verify(&self) -> VerifyReport {
        verify_bytes(&self.encoded())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::storage::SwitchableSink;

    fn log_at(secs: i64) -> (AuditLog, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::at_unix(secs));
        (AuditLog::with_sink(Vec::new(), Box::new(MemorySink), clock.clone()), clock)
    }

    #[test]
    fn genesis_and_link() {
        let (log, _) = log_at(1_600_000_000);
        let e0 = log.append(AuditEvent::new("alice", AuditAction::Ingest, "Patient/p1", "cleared")).unwrap();
        assert_eq!(e0.seq, 0);
        assert_eq!(e0.prev_hash, [0u8; 32]);
        let e1 = log.append(AuditEvent::new("bob", AuditAction::Login, "-", "ok")).unwrap();
        assert_eq!(e1.seq, 1);
        assert_eq!(e1.prev_hash, e0.entry_hash);
    }

    #[test]
    fn fixture_hash_matches_independent_digest() {
        // expected values computed with Python hashlib over the documented layout
        let (log, clock) = log_at(1_600_000_000);
        let e0 = log.append(AuditEvent::new("alice", AuditAction::Ingest, "Patient/p1", "cleared")).unwrap();
        assert_eq!(hex::encode(e0.entry_hash), "a18e8004a1307877e83ac5751662dfc6c8047082c5b57b271f044f5b720b8c5f");
        clock.advance(chrono::Duration::seconds(1));
        let e1 = log.append(AuditEvent::new("bob", AuditAction::Reidentify, "PSN-00", "ok")).unwrap();
        assert_eq!(hex::encode(e1.entry_hash), "9059f95e6ec27fa21bd3f78849d382a3a6a3729c9c536a46561c41e026369e01");
    }

    #[test]
    fn verify_empty_and_pristine() {
        assert_eq!(verify_bytes(&[]), VerifyReport { ok: true, first_bad_seq: None, verified: 0 });
        let (log, _) = log_at(0);
        for i in 0..1000 {
            log.append(AuditEvent::new(format!("p{}", i % 7), AuditAction::Access, format!("r{i}"), "ok")).unwrap();
        }
        let report = log.verify();
        assert!(report.ok);
        assert_eq!(report.verified, 1000);
    }

    #[test]
    fn truncated_tail_is_reported() {
        let (log, _) = log_at(0);
        for _ in 0..3 {
            log.append(AuditEvent::new("a", AuditAction::Access, "r", "ok")).unwrap();
        }
        let bytes = log.encoded();
        let report = verify_bytes(&bytes[..bytes.len() - 5]);
        assert_eq!(report.first_bad_seq, Some(2));
    }

    #[test]
    fn query_filters() {
        let (log, _) = log_at(0);
        log.append(AuditEvent::new("a", AuditAction::Login, "-", "ok")).unwrap();
        log.append(AuditEvent::new("b", AuditAction::Reidentify, "x", "ok")).unwrap();
        log.append(AuditEvent::new("a", AuditAction::Reidentify, "y", "ok")).unwrap();
        log.append(AuditEvent::new("a", AuditAction::Access, "z", "ok")).unwrap();
        assert_eq!(log.query(&AuditFilter::default()).len(), 4);
        let re = log.query(&AuditFilter { action: Some(AuditAction::Reidentify), ..Default::default() });
        assert_eq!(re.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2]);
        let by_a = log.query(&AuditFilter { principal: Some("a".into()), seq_from: Some(1), ..Default::default() });
        assert_eq!(by_a.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![2, 3]);
        assert!(log.query(&AuditFilter { seq_from: Some(10), seq_to: Some(20), ..Default::default() }).is_empty());
    }

    #[test]
    fn failed_append_leaves_log_unchanged() {
        let (sink, switch) = SwitchableSink::new(MemorySink);
        let log = AuditLog::with_sink(Vec::new(), Box::new(sink), Arc::new(SystemClock));
        log.append(AuditEvent::new("a", AuditAction::Login, "-", "ok")).unwrap();
        switch.store(true, std::sync::atomic::Ordering::SeqCst);
        assert!(matches!(
            log.append(AuditEvent::new("a", AuditAction::Login, "-", "ok")),
            Err(AuditError::StorageFailure(_))
        ));
        assert_eq!(log.len(), 1);
        switch.store(false, std::sync::atomic::Ordering::SeqCst);
        assert_eq!(log.append(AuditEvent::new("a", AuditAction::Login, "-", "ok")).unwrap().seq, 1);
    }

    #[test]
    fn file_log_reopens_and_refuses_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        {
            let log = AuditLog::open(&path, Arc::new(SystemClock)).unwrap();
            log.append(AuditEvent::new("a", AuditAction::Login, "-", "ok")).unwrap();
            log.append(AuditEvent::new("a", AuditAction::Ingest, "r", "ok")).unwrap();
        }
        let log = AuditLog::open(&path, Arc::new(SystemClock)).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.append(AuditEvent::new("a", AuditAction::Access, "-", "ok")).unwrap().seq, 2);
        drop(log);
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(AuditLog::open(&path, Arc::new(SystemClock)), Err(AuditError::Corrupt(2))));
    }
}
