//! Content-addressed storage.
//!
//! Two interchangeable backends sit behind [`ContentStore`]:
//!
//! * [`LocalStore`] keeps one file per object on disk and derives the CID
//!   itself: the base58btc encoding of the SHA-256 multihash of the raw
//!   bytes, whatever their size (no chunking, no DAG).
//! * [`RemoteStore`] talks to an IPFS daemon over its HTTP API and never
//!   recomputes CIDs. Daemon CIDs for large files come from a chunked DAG and
//!   will not match the local backend's; cross-backend equality is not
//!   promised.

mod local;
mod remote;

use std::fmt;
use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::UploadMetrics;

pub use local::{GcSummary, LocalStore};
pub use remote::{RemoteConfig, RemoteStore, RetrievalMode};

/// Multihash function code for SHA2-256.
pub const MULTIHASH_SHA2_256: u8 = 0x12;
/// Digest length byte for a 32-byte SHA-256 digest.
pub const MULTIHASH_SHA2_256_LEN: u8 = 0x20;
/// Length in characters of a local-backend CID.
pub const LOCAL_CID_LEN: usize = 46;
/// Files are hashed and uploaded in chunks of this size.
pub const STREAM_CHUNK_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Local,
    Remote,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Local => f.write_str("local"),
            BackendKind::Remote => f.write_str("remote"),
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(BackendKind::Local),
            "remote" => Ok(BackendKind::Remote),
            other => Err(format!("unknown backend `{other}` (expected local or remote)")),
        }
    }
}

/// A content identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cid {
    text: String,
    backend: BackendKind,
}

impl Cid {
    /// CID the local backend assigns to `content`.
    pub fn for_content(content: &[u8]) -> Cid {
        Cid::from_sha256(Sha256::digest(content).into())
    }

    /// Local CID for an already computed SHA-256 digest.
    pub fn from_sha256(digest: [u8; 32]) -> Cid {
        let mut multihash = Vec::with_capacity(34);
        multihash.push(MULTIHASH_SHA2_256);
        multihash.push(MULTIHASH_SHA2_256_LEN);
        multihash.extend_from_slice(&digest);
        Cid {
            text: bs58::encode(multihash).into_string(),
            backend: BackendKind::Local,
        }
    }

    /// Parses and validates a local-backend CID.
    pub fn parse_local(text: &str) -> Result<Cid, CasError> {
        let invalid = || CasError::InvalidCid(text.to_string());
        if text.len() != LOCAL_CID_LEN || !text.starts_with("Qm") {
            return Err(invalid());
        }
        let bytes = bs58::decode(text).into_vec().map_err(|_| invalid())?;
        if bytes.len() != 34
            || bytes[0] != MULTIHASH_SHA2_256
            || bytes[1] != MULTIHASH_SHA2_256_LEN
        {
            return Err(invalid());
        }
        Ok(Cid {
            text: text.to_string(),
            backend: BackendKind::Local,
        })
    }

    /// Wraps a daemon-issued CID. Only non-emptiness and the absence of
    /// whitespace/path separators are checked; the daemon owns the format.
    pub fn remote(text: &str) -> Result<Cid, CasError> {
        let ok = !text.is_empty()
            && text
                .chars()
                .all(|c| c.is_ascii_alphanumeric() && c != '/' && !c.is_whitespace());
        if !ok {
            return Err(CasError::InvalidCid(text.to_string()));
        }
        Ok(Cid {
            text: text.to_string(),
            backend: BackendKind::Remote,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn backend(&self) -> BackendKind {
        self.backend
    }

    /// The SHA-256 digest embedded in a local CID.
    pub fn sha256_digest(&self) -> Option<[u8; 32]> {
        if self.backend != BackendKind::Local {
            return None;
        }
        let bytes = bs58::decode(&self.text).into_vec().ok()?;
        bytes.get(2..34)?.try_into().ok()
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Metadata about a stored object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentStat {
    pub size_bytes: u64,
    pub pinned: bool,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum CasError {
    #[error("content backend unreachable: {0}")]
    Unreachable(String),
    #[error("storage write failed: {0}")]
    Storage(#[source] std::io::Error),
    #[error("content not found: {0}")]
    NotFound(String),
    #[error("stored object for {0} no longer matches its CID")]
    IntegrityMismatch(String),
    #[error("malformed CID `{0}`")]
    InvalidCid(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("reading input failed: {0}")]
    Input(#[source] std::io::Error),
}

impl CasError {
    /// Whether retrying the same call later may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, CasError::Unreachable(_))
    }
}

/// Common interface over the local and remote backends.
pub trait ContentStore: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Stores `content` and returns its CID with upload timing.
    fn put(&self, content: &[u8]) -> Result<(Cid, UploadMetrics), CasError>;

    /// Stores the file at `path`, streaming it in [`STREAM_CHUNK_BYTES`]
    /// chunks so memory use does not grow with file size.
    fn put_file(&self, path: &Path) -> Result<(Cid, UploadMetrics), CasError>;

    /// Returns the stored bytes. The local backend refuses to return bytes
    /// that no longer hash to the CID.
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError>;

    /// Returns whatever bytes currently resolve at `cid`, without integrity
    /// checking. Verification passes use this so they can tell altered
    /// content from missing content.
    fn fetch_raw(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        self.get(cid)
    }

    fn pin(&self, cid: &Cid) -> Result<ContentStat, CasError>;

    fn stat(&self, cid: &Cid) -> Result<ContentStat, CasError>;

    /// Validates CID text for this backend.
    fn parse_cid(&self, text: &str) -> Result<Cid, CasError>;

    /// [`ContentStore::get`] plus its wall-clock duration in seconds.
    fn get_timed(&self, cid: &Cid) -> Result<(Vec<u8>, f64), CasError> {
        let start = Instant::now();
        let bytes = self.get(cid)?;
        Ok((bytes, start.elapsed().as_secs_f64()))
    }
}

impl<T: ContentStore + ?Sized> ContentStore for std::sync::Arc<T> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn put(&self, content: &[u8]) -> Result<(Cid, UploadMetrics), CasError> {
        (**self).put(content)
    }
    fn put_file(&self, path: &Path) -> Result<(Cid, UploadMetrics), CasError> {
        (**self).put_file(path)
    }
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        (**self).get(cid)
    }
    fn fetch_raw(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        (**self).fetch_raw(cid)
    }
    fn pin(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        (**self).pin(cid)
    }
    fn stat(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        (**self).stat(cid)
    }
    fn parse_cid(&self, text: &str) -> Result<Cid, CasError> {
        (**self).parse_cid(text)
    }
}
