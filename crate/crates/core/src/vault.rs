//! Pseudonym vault: the hospital-side mapping between source identifiers and
//! pseudonyms.
//!
//! Pseudonyms are derived, not drawn: `PSN-` followed by the first 16 bytes
//! (lowercase hex) of `HMAC-SHA256(key, scope-tag || 0x00 || source-id)`. The
//! same key yields the same pseudonyms after a restart without any
//! coordination; the store exists for re-identification and audit.
//!
//! This is pseudonymization, not anonymization: whoever holds the vault file
//! and the `reidentify` privilege can reverse a mapping.
//!
//! # On-disk log
//!
//! ```text
//! file   := "EGVAULT1" frame*
//! frame  := len:u32be record check[4]        check = SHA-256(record)[..4]
//! record := scope:u8 created_us:i64be source:string pseudonym:string
//! string := len:u32be utf8-bytes
//! ```
//!
//! A torn final frame (crash during append) is dropped on open; any other
//! damage refuses to open.
//!
//! # Export document
//!
//! ```text
//! export := "EGVX" version:u16be count:u64be digest[64] body
//! body   := (len:u32be record)*              sorted by (scope, source)
//! ```
//!
//! `digest` is the lowercase hex SHA-256 of `body`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{AuditAction, AuditEvent, AuditLog};
use crate::clock::to_micros;
use crate::privilege::{Privilege, PrivilegeSet};
use crate::storage::{put_str, AppendSink, FileSink, MemorySink, Reader};

const LOG_MAGIC: &[u8; 8] = b"EGVAULT1";
const EXPORT_MAGIC: &[u8; 4] = b"EGVX";
pub const EXPORT_VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VaultError {
    #[error("vault storage failure: {0}")]
    StorageFailure(String),
    #[error("not found")]
    NotFound,
    #[error("forbidden")]
    Forbidden,
    #[error("vault key must be 32 bytes, got {0}")]
    BadKeyLength(usize),
    #[error("source id must not be empty")]
    EmptySource,
    #[error("invalid export: {0}")]
    BadExport(String),
}

/// 32-byte vault secret. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct VaultKey([u8; 32]);

impl VaultKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, VaultError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| VaultError::BadKeyLength(bytes.len()))?;
        Ok(VaultKey(arr))
    }

    /// Accepts 64 hex characters (surrounding whitespace ignored) or 32 raw bytes.
    pub fn from_file_contents(bytes: &[u8]) -> Result<Self, VaultError> {
        if let Ok(text) = std::str::from_utf8(bytes) {
            let trimmed = text.trim();
            if trimmed.len() == 64 {
                if let Ok(raw) = hex::decode(trimmed) {
                    return Self::from_slice(&raw);
                }
            }
        }
        Self::from_slice(bytes)
    }

    pub fn load(path: &Path) -> Result<Self, VaultError> {
        let bytes = std::fs::read(path).map_err(|e| VaultError::StorageFailure(format!("{}: {e}", path.display())))?;
        Self::from_file_contents(&bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for VaultKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("VaultKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    PatientId,
    ResourceId,
    DicomUid,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::PatientId, Scope::ResourceId, Scope::DicomUid];

    /// Bytes mixed into the derivation ahead of the 0x00 separator.
    pub fn tag(self) -> &'static str {
        match self {
            Scope::PatientId => "patient-id",
            Scope::ResourceId => "resource-id",
            Scope::DicomUid => "dicom-uid",
        }
    }

    fn code(self) -> u8 {
        match self {
            Scope::PatientId => 1,
            Scope::ResourceId => 2,
            Scope::DicomUid => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Scope::ALL.into_iter().find(|s| s.code() == c)
    }
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scope::ALL.into_iter().find(|sc| sc.tag() == s).ok_or_else(|| format!("unknown scope {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultEntry {
    pub source_id: String,
    pub pseudonym: String,
    pub scope: Scope,
    pub created_at: DateTime<Utc>,
}

impl VaultEntry {
    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(17 + self.source_id.len() + self.pseudonym.len());
        buf.push(self.scope.code());
        buf.extend_from_slice(&self.created_at.timestamp_micros().to_be_bytes());
        put_str(&mut buf, &self.source_id);
        put_str(&mut buf, &self.pseudonym);
        buf
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let scope = Scope::from_code(r.u8()?)?;
        let created_at = DateTime::from_timestamp_micros(r.i64()?)?;
        let source_id = r.string()?.to_string();
        let pseudonym = r.string()?.to_string();
        (r.remaining() == 0).then_some(VaultEntry { source_id, pseudonym, scope, created_at })
    }
}

/// `PSN-` + 32 lowercase hex characters.
pub fn is_pseudonym(s: &str) -> bool {
    s.len() == 36
        && s.starts_with("PSN-")
        && s[4..].bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// The pure derivation behind [`PseudonymVault::get_or_create`].
pub fn derive_pseudonym(key: &VaultKey, scope: Scope, source_id: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key.as_bytes()).expect("HMAC takes any key length");
    mac.update(scope.tag().as_bytes());
    mac.update(&[0u8]);
    mac.update(source_id.as_bytes());
    let digest = mac.finalize().into_bytes();
    format!("PSN-{}", hex::encode(&digest[..16]))
}

/// DICOM UID form of a pseudonym: the `2.25.` root followed by the 128-bit
/// value in decimal.
pub fn pseudonym_to_uid(pseudonym: &str) -> Option<String> {
    if !is_pseudonym(pseudonym) {
        return None;
    }
    let value = u128::from_str_radix(&pseudonym[4..], 16).ok()?;
    Some(format!("2.25.{value}"))
}

pub fn uid_to_pseudonym(uid: &str) -> Option<String> {
    let value: u128 = uid.strip_prefix("2.25.")?.parse().ok()?;
    Some(format!("PSN-{value:032x}"))
}

#[derive(Default)]
struct Index {
    entries: Vec<VaultEntry>,
    by_source: HashMap<(Scope, String), usize>,
    by_pseudonym: HashMap<(Scope, String), usize>,
}

impl Index {
    fn insert(&mut self, entry: VaultEntry) -> Result<(), VaultError> {
        let src = (entry.scope, entry.source_id.clone());
        let psn = (entry.scope, entry.pseudonym.clone());
        if self.by_source.contains_key(&src) || self.by_pseudonym.contains_key(&psn) {
            return Err(VaultError::StorageFailure(format!(
                "mapping for {:?} would break the per-scope bijection",
                entry.scope
            )));
        }
        let idx = self.entries.len();
        self.entries.push(entry);
        self.by_source.insert(src, idx);
        self.by_pseudonym.insert(psn, idx);
        Ok(())
    }
}

pub struct PseudonymVault {
    key: VaultKey,
    index: RwLock<Index>,
    sink: Mutex<Box<dyn AppendSink>>,
}

impl fmt::Debug for PseudonymVault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PseudonymVault").field("entries", &self.len()).finish()
    }
}

fn frame(record: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(record.len() + 8);
    out.extend_from_slice(&(record.len() as u32).to_be_bytes());
    out.extend_from_slice(record);
    out.extend_from_slice(&Sha256::digest(record)[..4]);
    out
}

impl PseudonymVault {
    pub fn in_memory(key: VaultKey) -> Self {
        Self::with_sink(key, Box::new(MemorySink))
    }

    pub fn with_sink(key: VaultKey, sink: Box<dyn AppendSink>) -> Self {
        PseudonymVault { key, index: RwLock::new(Index::default()), sink: Mutex::new(sink) }
    }

    /// Opens or creates the vault log at `path`.
    pub fn open(path: &Path, key: VaultKey) -> Result<Self, VaultError> {
        let storage = |e: std::io::Error| VaultError::StorageFailure(format!("{}: {e}", path.display()));
        let mut index = Index::default();
        match std::fs::read(path) {
            Ok(bytes) if !bytes.is_empty() => {
                if bytes.len() < LOG_MAGIC.len() || &bytes[..LOG_MAGIC.len()] != LOG_MAGIC {
                    return Err(VaultError::StorageFailure(format!("{}: not a vault file", path.display())));
                }
                let mut r = Reader::new(&bytes[LOG_MAGIC.len()..]);
                let mut good_len = LOG_MAGIC.len();
                while r.remaining() > 0 {
                    let Some(len) = r.u32() else { break };
                    let (Some(record), Some(check)) = (r.take(len as usize), r.take(4)) else { break };
                    let entry = VaultEntry::decode(record)
                        .filter(|_| Sha256::digest(record)[..4] == *check)
                        .ok_or_else(|| VaultError::StorageFailure(format!("{}: damaged record", path.display())))?;
                    if derive_pseudonym(&key, entry.scope, &entry.source_id) != entry.pseudonym {
                        return Err(VaultError::StorageFailure("vault was written under a different key".into()));
                    }
                    index.insert(entry)?;
                    good_len = LOG_MAGIC.len() + r.pos;
                }
                if good_len < bytes.len() {
                    let f = std::fs::OpenOptions::new().write(true).open(path).map_err(storage)?;
                    f.set_len(good_len as u64).map_err(storage)?;
                    f.sync_all().map_err(storage)?;
                }
            }
            Ok(_) => std::fs::write(path, LOG_MAGIC).map_err(storage)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let mut f = std::fs::File::create(path).map_err(storage)?;
                f.write_all(LOG_MAGIC).map_err(storage)?;
                f.sync_all().map_err(storage)?;
            }
            Err(e) => return Err(storage(e)),
        }
        let sink = FileSink::open(path).map_err(storage)?;
        Ok(PseudonymVault { key, index: RwLock::new(index), sink: Mutex::new(Box::new(sink)) })
    }

    pub fn key(&self) -> &VaultKey {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap_or_else(|p| p.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the pseudonym for `(scope, source_id)`, persisting a new entry on
    /// first use. Linearizable: concurrent callers on one id see one entry.
    pub fn get_or_create(&self, source_id: &str, scope: Scope) -> Result<String, VaultError> {
        if source_id.is_empty() {
            return Err(VaultError::EmptySource);
        }
        let key = (scope, source_id.to_string());
        {
            let index = self.index.read().unwrap_or_else(|p| p.into_inner());
            if let Some(&i) = index.by_source.get(&key) {
                return Ok(index.entries[i].pseudonym.clone());
            }
        }
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        let mut index = self.index.write().unwrap_or_else(|p| p.into_inner());
        if let Some(&i) = index.by_source.get(&key) {
            return Ok(index.entries[i].pseudonym.clone());
        }
        let entry = VaultEntry {
            pseudonym: derive_pseudonym(&self.key, scope, source_id),
            source_id: source_id.to_string(),
            scope,
            created_at: to_micros(Utc::now()),
        };
        if index.by_pseudonym.contains_key(&(scope, entry.pseudonym.clone())) {
            return Err(VaultError::StorageFailure("pseudonym collision".into()));
        }
        sink.append(&frame(&entry.encode())).map_err(|e| VaultError::StorageFailure(e.to_string()))?;
        let pseudonym = entry.pseudonym.clone();
        index.insert(entry)?;
        Ok(pseudonym)
    }

    pub fn lookup(&self, pseudonym: &str, scope: Scope) -> Option<VaultEntry> {
        let index = self.index.read().unwrap_or_else(|p| p.into_inner());
        index.by_pseudonym.get(&(scope, pseudonym.to_string())).map(|&i| index.entries[i].clone())
    }

    /// Reverses a pseudonym. The lookup runs before the privilege check so a
    /// refusal takes the same path as a miss. Every call writes one audit entry;
    /// if that write fails, nothing is returned.
    pub fn reidentify(
        &self,
        pseudonym: &str,
        scope: Scope,
        actor: &str,
        privileges: &PrivilegeSet,
        audit: &AuditLog,
    ) -> Result<String, VaultError> {
        let found = self.lookup(pseudonym, scope);
        let allowed = privileges.contains(&Privilege::Reidentify);
        let (result, outcome) = match (allowed, found) {
            (false, _) => (Err(VaultError::Forbidden), "forbidden"),
            (true, None) => (Err(VaultError::NotFound), "not-found"),
            (true, Some(entry)) => (Ok(entry.source_id), "ok"),
        };
        audit
            .append(AuditEvent::new(actor, AuditAction::Reidentify, format!("{}:{pseudonym}", scope.tag()), outcome))
            .map_err(|e| VaultError::StorageFailure(e.to_string()))?;
        result
    }

    pub fn entries(&self) -> Vec<VaultEntry> {
        let index = self.index.read().unwrap_or_else(|p| p.into_inner());
        let mut out = index.entries.clone();
        out.sort_by(|a, b| (a.scope, &a.source_id).cmp(&(b.scope, &b.source_id)));
        out
    }

    /// Sealed, versioned dump of every mapping.
    pub fn export_mappings(&self, privileges: &PrivilegeSet) -> Result<Vec<u8>, VaultError> {
        if !privileges.contains(&Privilege::Export) {
            return Err(VaultError::Forbidden);
        }
        let entries = self.entries();
        let mut body = Vec::new();
        for e in &entries {
            let rec = e.encode();
            body.extend_from_slice(&(rec.len() as u32).to_be_bytes());
            body.extend_from_slice(&rec);
        }
        let mut out = Vec::with_capacity(78 + body.len());
        out.extend_from_slice(EXPORT_MAGIC);
        out.extend_from_slice(&EXPORT_VERSION.to_be_bytes());
        out.extend_from_slice(&(entries.len() as u64).to_be_bytes());
        out.extend_from_slice(hex::encode(Sha256::digest(&body)).as_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Loads every mapping of an export into this vault. The document must
    /// verify against its header and match this vault's key.
    pub fn import_mappings(&self, document: &[u8]) -> Result<usize, VaultError> {
        let entries = parse_export(document)?;
        for e in &entries {
            if derive_pseudonym(&self.key, e.scope, &e.source_id) != e.pseudonym {
                return Err(VaultError::BadExport("mapping does not match this vault key".into()));
            }
        }
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        let mut index = self.index.write().unwrap_or_else(|p| p.into_inner());
        let mut added = 0;
        for e in entries {
            if index.by_source.contains_key(&(e.scope, e.source_id.clone())) {
                continue;
            }
            sink.append(&frame(&e.encode())).map_err(|e| VaultError::StorageFailure(e.to_string()))?;
            index.insert(e)?;
            added += 1;
        }
        Ok(added)
    }
}

/// Parses and checks an export document.
pub fn parse_export(document: &[u8]) -> Result<Vec<VaultEntry>, VaultError> {
    let bad = |m: &str| VaultError::BadExport(m.to_string());
    let mut r = Reader::new(document);
    if r.take(4) != Some(EXPORT_MAGIC.as_slice()) {
        return Err(bad("missing magic"));
    }
    let version = r.u16().ok_or_else(|| bad("truncated header"))?;
    if version != EXPORT_VERSION {
        return Err(VaultError::BadExport(format!("unsupported version {version}")));
    }
    let count = r.u64().ok_or_else(|| bad("truncated header"))?;
    let digest = r.take(64).ok_or_else(|| bad("truncated header"))?;
    let body = &document[r.pos..];
    if hex::encode(Sha256::digest(body)).as_bytes() != digest {
        return Err(bad("content digest mismatch"));
    }
    let mut br = Reader::new(body);
    let mut entries = Vec::new();
    while br.remaining() > 0 {
        let len = br.u32().ok_or_else(|| bad("truncated record"))?;
        let rec = br.take(len as usize).ok_or_else(|| bad("truncated record"))?;
        entries.push(VaultEntry::decode(rec).ok_or_else(|| bad("malformed record"))?);
    }
    if entries.len() as u64 != count {
        return Err(VaultError::BadExport(format!("header count {count}, found {}", entries.len())));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn zero_vault() -> PseudonymVault {
        PseudonymVault::in_memory(VaultKey::from_slice(&[0u8; 32]).unwrap())
    }

    fn privs(list: &[Privilege]) -> PrivilegeSet {
        list.iter().copied().collect()
    }

    #[test]
    fn pinned_vectors() {
        // independent oracle: Python hmac.new(bytes(32), scope + b"\0" + b"P123", sha256).digest()[:16]
        let v = zero_vault();
        assert_eq!(v.get_or_create("P123", Scope::PatientId).unwrap(), "PSN-7969a4ad86ed28f92b3f95ed299460a9");
        assert_eq!(v.get_or_create("P123", Scope::ResourceId).unwrap(), "PSN-84faf49236a5af1a36879ce47176ae7a");
        assert_eq!(v.get_or_create("P123", Scope::DicomUid).unwrap(), "PSN-d4d17e5adf9d3ce43e64c75e786e988f");
    }

    #[test]
    fn repeat_calls_store_one_entry() {
        let v = zero_vault();
        let a = v.get_or_create("x", Scope::PatientId).unwrap();
        let b = v.get_or_create("x", Scope::PatientId).unwrap();
        assert_eq!(a, b);
        assert_eq!(v.len(), 1);
        assert!(is_pseudonym(&a));
        assert_eq!(v.get_or_create("", Scope::PatientId), Err(VaultError::EmptySource));
    }

    #[test]
    fn concurrent_get_or_create_yields_one_entry() {
        let v = Arc::new(zero_vault());
        let handles: Vec<_> = (0..64)
            .map(|_| {
                let v = v.clone();
                std::thread::spawn(move || v.get_or_create("same", Scope::PatientId).unwrap())
            })
            .collect();
        let results: std::collections::HashSet<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(results.len(), 1);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn reidentify_paths_each_audited_once() {
        let v = zero_vault();
        let audit = AuditLog::in_memory();
        let p = v.get_or_create("P123", Scope::PatientId).unwrap();
        let ok = privs(&[Privilege::Reidentify]);
        assert_eq!(v.reidentify(&p, Scope::PatientId, "op", &ok, &audit), Ok("P123".into()));
        assert_eq!(v.reidentify(&p, Scope::PatientId, "op", &privs(&[]), &audit), Err(VaultError::Forbidden));
        assert_eq!(v.reidentify("PSN-00", Scope::PatientId, "op", &ok, &audit), Err(VaultError::NotFound));
        assert_eq!(v.reidentify(&p, Scope::ResourceId, "op", &ok, &audit), Err(VaultError::NotFound));
        let entries = audit.query(&Default::default());
        assert_eq!(entries.len(), 4);
        assert!(entries.iter().all(|e| e.action == AuditAction::Reidentify));
        assert_eq!(entries[1].outcome, "forbidden");
    }

    #[test]
    fn export_import_export_is_byte_identical() {
        let v = zero_vault();
        let all = privs(&[Privilege::Export]);
        let empty = v.export_mappings(&all).unwrap();
        assert_eq!(parse_export(&empty).unwrap().len(), 0);
        assert_eq!(u64::from_be_bytes(empty[6..14].try_into().unwrap()), 0);
        for i in 0..50 {
            v.get_or_create(&format!("id-{i}"), Scope::ALL[i % 3]).unwrap();
        }
        let first = v.export_mappings(&all).unwrap();
        let w = zero_vault();
        assert_eq!(w.import_mappings(&first).unwrap(), 50);
        assert_eq!(w.export_mappings(&all).unwrap(), first);
        assert_eq!(v.export_mappings(&privs(&[Privilege::Review])), Err(VaultError::Forbidden));
    }

    #[test]
    fn tampered_export_fails_digest() {
        let v = zero_vault();
        v.get_or_create("P123", Scope::PatientId).unwrap();
        let mut doc = v.export_mappings(&privs(&[Privilege::Export])).unwrap();
        let last = doc.len() - 1;
        doc[last] ^= 0x20;
        assert_eq!(parse_export(&doc), Err(VaultError::BadExport("content digest mismatch".into())));
        let other = PseudonymVault::in_memory(VaultKey::from_slice(&[1u8; 32]).unwrap());
        let clean = v.export_mappings(&privs(&[Privilege::Export])).unwrap();
        assert!(matches!(other.import_mappings(&clean), Err(VaultError::BadExport(_))));
    }

    #[test]
    fn file_vault_survives_restart_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vault.log");
        let key = VaultKey::from_slice(&[7u8; 32]).unwrap();
        let p = {
            let v = PseudonymVault::open(&path, key.clone()).unwrap();
            v.get_or_create("a", Scope::PatientId).unwrap();
            v.get_or_create("b", Scope::ResourceId).unwrap()
        };
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 40, 1, 2]).unwrap();
        drop(f);
        let v = PseudonymVault::open(&path, key).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.lookup(&p, Scope::ResourceId).unwrap().source_id, "b");
        v.get_or_create("c", Scope::DicomUid).unwrap();
        drop(v);
        let wrong = PseudonymVault::open(&path, VaultKey::from_slice(&[8u8; 32]).unwrap());
        assert!(matches!(wrong, Err(VaultError::StorageFailure(_))));
    }

    #[test]
    fn failing_sink_fails_closed() {
        let (sink, switch) = crate::storage::SwitchableSink::new(MemorySink);
        let v = PseudonymVault::with_sink(VaultKey::from_slice(&[0u8; 32]).unwrap(), Box::new(sink));
        switch.store(true, std::sync::atomic::Ordering::SeqCst);
        assert!(matches!(v.get_or_create("x", Scope::PatientId), Err(VaultError::StorageFailure(_))));
        assert!(v.is_empty());
    }

    #[test]
    fn uid_form_round_trips() {
        let p = derive_pseudonym(&VaultKey::from_slice(&[0u8; 32]).unwrap(), Scope::DicomUid, "1.2.3");
        let uid = pseudonym_to_uid(&p).unwrap();
        assert!(uid.len() <= 64 && uid.starts_with("2.25."));
        assert_eq!(uid_to_pseudonym(&uid).unwrap(), p);
    }

    #[test]
    fn key_parsing() {
        let hexkey = "00".repeat(32);
        assert_eq!(VaultKey::from_file_contents(format!("{hexkey}\n").as_bytes()).unwrap().as_bytes(), &[0u8; 32]);
        assert_eq!(VaultKey::from_slice(&[0u8; 5]), Err(VaultError::BadKeyLength(5)));
    }
}
