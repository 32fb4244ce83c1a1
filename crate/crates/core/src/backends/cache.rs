//! Persistent call cache.
//!
//! Entries live at `<dir>/<k[0..2]>/<k>.json` where `k` is the SHA-256 of
//! the canonical JSON `{"backend": id, "request": request}`. Each entry
//! stores the response JSON together with its SHA-256 checksum; an entry
//! that fails to parse or verify is treated as a miss and rewritten.
//! Writes go through a temp file and an atomic rename, serialized per key
//! stripe; reads take no lock.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, BackendResponse, SharedBackend};

const STRIPES: usize = 64;

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    checksum: String,
    response: String,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub corrupt: usize,
}

pub struct CachedBackend {
    inner: SharedBackend,
    dir: PathBuf,
    locks: Vec<Mutex<()>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    corrupt: AtomicUsize,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl CachedBackend {
    pub fn new(inner: SharedBackend, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            locks: (0..STRIPES).map(|_| Mutex::new(())).collect(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            corrupt: AtomicUsize::new(0),
        })
    }

    pub fn key(&self, request: &BackendRequest) -> String {
        let canonical = serde_json::json!({ "backend": self.inner.id(), "request": request });
        sha256_hex(canonical.to_string().as_bytes())
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            corrupt: self.corrupt.load(Ordering::SeqCst),
        }
    }

    /// `Err(())` marks an entry that exists but cannot be trusted.
    fn read(key: &str, path: &Path) -> Result<Option<BackendResponse>, ()> {
        let Ok(raw) = fs::read(path) else { return Ok(None) };
        serde_json::from_slice::<CacheEntry>(&raw)
            .ok()
            .filter(|e| e.key == key && e.checksum == sha256_hex(e.response.as_bytes()))
            .and_then(|e| serde_json::from_str::<BackendResponse>(&e.response).ok())
            .map(Some)
            .ok_or(())
    }

    fn write(&self, key: &str, path: &Path, response: &BackendResponse) -> std::io::Result<()> {
        let body = serde_json::to_string(response).expect("responses always serialize");
        let entry = CacheEntry { key: key.to_string(), checksum: sha256_hex(body.as_bytes()), response: body };
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let tmp =
            parent.join(format!(".{key}.{}.{}.tmp", std::process::id(), TMP_COUNTER.fetch_add(1, Ordering::SeqCst)));
        fs::write(&tmp, serde_json::to_vec(&entry).expect("entry serializes"))?;
        fs::rename(&tmp, path)
    }
}

impl Backend for CachedBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let key = self.key(request);
        let path = self.entry_path(&key);
        let mut corrupt = false;
        match Self::read(&key, &path) {
            Ok(Some(hit)) => {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
            Ok(None) => {}
            Err(()) => corrupt = true,
        }
        let stripe = usize::from_str_radix(&key[..2], 16).unwrap_or(0) % STRIPES;
        let _guard = self.locks[stripe].lock().unwrap_or_else(|p| p.into_inner());
        // another worker may have filled the entry while we waited
        match Self::read(&key, &path) {
            Ok(Some(hit)) => {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
            Ok(None) => {}
            Err(()) => corrupt = true,
        }
        if corrupt {
            self.corrupt.fetch_add(1, Ordering::SeqCst);
            tracing::warn!(path = %path.display(), "corrupt cache entry, recomputing");
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.call(request)?;
        if let Err(e) = self.write(&key, &path, &response) {
            tracing::warn!(error = %e, "failed to write cache entry");
        }
        Ok(response)
    }
}
