//! File-backed object store with per-object metadata.
//!
//! Layout under the root: `data/<bucket>/<key>` holds the bytes and
//! `meta/<bucket>/<key>.json` the [`StoredObject`] record. Both are written
//! through a temporary file and renamed into place.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attestation {
    DeidVerified,
    OperatorAttested,
}

impl Attestation {
    pub fn as_str(self) -> &'static str {
        match self {
            Attestation::DeidVerified => "deid-verified",
            Attestation::OperatorAttested => "operator-attested",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Attestation::DeidVerified, Attestation::OperatorAttested].into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub bucket: String,
    pub key: String,
    pub attestation: Attestation,
    pub uploader: String,
    /// Lowercase hex SHA-256 of the bytes.
    pub digest: String,
    pub size: u64,
    pub stored_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid bucket name {0:?}")]
    BadBucket(String),
    #[error("invalid object key {0:?}")]
    BadKey(String),
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt metadata for {0}")]
    CorruptMeta(String),
}

pub fn valid_bucket(name: &str) -> bool {
    (3..=63).contains(&name.len())
        && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !name.starts_with('-')
        && !name.ends_with('-')
}

pub fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.len() <= 512
        && key.split('/').all(|seg| {
            !seg.is_empty()
                && !seg.starts_with('.')
                && seg.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_'))
        })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("object paths have a parent");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("object")));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

pub struct ObjectStore {
    root: PathBuf,
    lock: RwLock<()>,
}

impl ObjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("data"))?;
        fs::create_dir_all(root.join("meta"))?;
        Ok(ObjectStore { root, lock: RwLock::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn paths(&self, bucket: &str, key: &str) -> Result<(PathBuf, PathBuf), StoreError> {
        if !valid_bucket(bucket) {
            return Err(StoreError::BadBucket(bucket.into()));
        }
        if !valid_key(key) {
            return Err(StoreError::BadKey(key.into()));
        }
        Ok((self.root.join("data").join(bucket).join(key), self.root.join("meta").join(bucket).join(format!("{key}.json"))))
    }

    pub fn put(
        &self,
        bucket: &str,
        key: &str,
        bytes: &[u8],
        attestation: Attestation,
        uploader: &str,
        at: DateTime<Utc>,
    ) -> Result<StoredObject, StoreError> {
        let (data, meta) = self.paths(bucket, key)?;
        let record = StoredObject {
            bucket: bucket.into(),
            key: key.into(),
            attestation,
            uploader: uploader.into(),
            digest: sha256_hex(bytes),
            size: bytes.len() as u64,
            stored_at: at,
        };
        let _guard = self.lock.write().unwrap_or_else(|p| p.into_inner());
        write_atomic(&data, bytes)?;
        write_atomic(&meta, &serde_json::to_vec_pretty(&record).expect("metadata serializes"))?;
        Ok(record)
    }

    fn read_meta(path: &Path) -> Result<Option<StoredObject>, StoreError> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|_| StoreError::CorruptMeta(path.display().to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn head(&self, bucket: &str, key: &str) -> Result<Option<StoredObject>, StoreError> {
        let (_, meta) = self.paths(bucket, key)?;
        let _guard = self.lock.read().unwrap_or_else(|p| p.into_inner());
        Self::read_meta(&meta)
    }

    pub fn get(&self, bucket: &str, key: &str) -> Result<Option<(StoredObject, Vec<u8>)>, StoreError> {
        let (data, meta) = self.paths(bucket, key)?;
        let _guard = self.lock.read().unwrap_or_else(|p| p.into_inner());
        let Some(record) = Self::read_meta(&meta)? else { return Ok(None) };
        Ok(Some((record, fs::read(data)?)))
    }

    pub fn delete(&self, bucket: &str, key: &str) -> Result<bool, StoreError> {
        let (data, meta) = self.paths(bucket, key)?;
        let _guard = self.lock.write().unwrap_or_else(|p| p.into_inner());
        match fs::remove_file(&meta) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(false),
            Err(e) => return Err(e.into()),
        }
        fs::remove_file(data)?;
        Ok(true)
    }

    /// Objects in one bucket, sorted by key.
    pub fn list(&self, bucket: &str) -> Result<Vec<StoredObject>, StoreError> {
        if !valid_bucket(bucket) {
            return Err(StoreError::BadBucket(bucket.into()));
        }
        self.scan(&self.root.join("meta").join(bucket))
    }

    /// Every object in every bucket, sorted by bucket then key.
    pub fn all(&self) -> Result<Vec<StoredObject>, StoreError> {
        self.scan(&self.root.join("meta"))
    }

    fn scan(&self, dir: &Path) -> Result<Vec<StoredObject>, StoreError> {
        let _guard = self.lock.read().unwrap_or_else(|p| p.into_inner());
        let mut out = Vec::new();
        if !dir.exists() {
            return Ok(out);
        }
        for entry in WalkDir::new(dir) {
            let entry = entry.map_err(|e| StoreError::Io(e.into()))?;
            let name = entry.file_name().to_string_lossy();
            if entry.file_type().is_file() && name.ends_with(".json") && !name.starts_with('.') {
                out.extend(Self::read_meta(entry.path())?);
            }
        }
        out.sort_by(|a, b| (&a.bucket, &a.key).cmp(&(&b.bucket, &b.key)));
        Ok(out)
    }
}
