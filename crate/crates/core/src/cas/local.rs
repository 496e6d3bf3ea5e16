use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, CasError, Cid, ContentStat, ContentStore, STREAM_CHUNK_BYTES};
use crate::metrics::UploadMetrics;
use crate::util::append_line_durable;

const OBJECTS_DIR: &str = "objects";
const TMP_DIR: &str = "tmp";
const PIN_JOURNAL: &str = "pins.jsonl";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// On-disk content-addressed store.
///
/// Layout under `root`:
///
/// ```text
/// objects/<cid[2..4]>/<cid>   one file per object
/// pins.jsonl                  append-only pin journal
/// tmp/                        staging area for in-flight writes
/// ```
#[derive(Debug)]
pub struct LocalStore {
    root: PathBuf,
    pins: Mutex<PinSet>,
}

#[derive(Debug)]
struct PinSet {
    pinned: HashSet<String>,
    journal: File,
}

#[derive(Serialize, Deserialize)]
struct PinRecord {
    cid: String,
    pinned_at_ms: u64,
}

/// Result of a garbage-collection pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcSummary {
    pub removed: usize,
    pub kept_pinned: usize,
}

impl LocalStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<LocalStore, CasError> {
        let root = root.into();
        fs::create_dir_all(root.join(OBJECTS_DIR)).map_err(CasError::Storage)?;
        fs::create_dir_all(root.join(TMP_DIR)).map_err(CasError::Storage)?;

        let journal_path = root.join(PIN_JOURNAL);
        let mut pinned = HashSet::new();
        if journal_path.exists() {
            let reader = BufReader::new(File::open(&journal_path).map_err(CasError::Storage)?);
            for line in reader.lines() {
                let line = line.map_err(CasError::Storage)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<PinRecord>(&line) {
                    Ok(rec) => {
                        pinned.insert(rec.cid);
                    }
                    // A torn final line only loses a pin that was never acknowledged.
                    Err(e) => log::warn!("skipping unreadable pin journal line: {e}"),
                }
            }
        }
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(CasError::Storage)?;

        Ok(LocalStore {
            root,
            pins: Mutex::new(PinSet { pinned, journal }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of the object file for `cid`.
    pub fn object_path(&self, cid: &Cid) -> PathBuf {
        let text = cid.as_str();
        let fan = text.get(2..4).unwrap_or("__");
        self.root.join(OBJECTS_DIR).join(fan).join(text)
    }

    /// Removes every unpinned object.
    pub fn gc(&self) -> Result<GcSummary, CasError> {
        let pins = self.pins.lock().expect("pin set poisoned");
        let mut summary = GcSummary::default();
        for fan in fs::read_dir(self.root.join(OBJECTS_DIR)).map_err(CasError::Storage)? {
            let fan = fan.map_err(CasError::Storage)?;
            if !fan.file_type().map_err(CasError::Storage)?.is_dir() {
                continue;
            }
            for obj in fs::read_dir(fan.path()).map_err(CasError::Storage)? {
                let obj = obj.map_err(CasError::Storage)?;
                let name = obj.file_name().to_string_lossy().into_owned();
                if pins.pinned.contains(&name) {
                    summary.kept_pinned += 1;
                } else {
                    fs::remove_file(obj.path()).map_err(CasError::Storage)?;
                    summary.removed += 1;
                }
            }
        }
        Ok(summary)
    }

    fn staging_file(&self) -> Result<(PathBuf, File), CasError> {
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = self
            .root
            .join(TMP_DIR)
            .join(format!("put-{}-{}", std::process::id(), n));
        let file = File::create(&path).map_err(CasError::Storage)?;
        Ok((path, file))
    }

    fn commit_staged(&self, staged: &Path, cid: &Cid) -> Result<(), CasError> {
        let dest = self.object_path(cid);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(CasError::Storage)?;
        }
        fs::rename(staged, &dest).map_err(|e| {
            let _ = fs::remove_file(staged);
            CasError::Storage(e)
        })
    }

    /// Streams `reader` into the store, hashing as it goes.
    fn put_stream(&self, reader: &mut dyn Read, chunk: usize) -> Result<(Cid, u64), CasError> {
        let (staged, mut out) = self.staging_file()?;
        let result = (|| {
            let mut hasher = Sha256::new();
            let mut buf = vec![0u8; chunk.clamp(1, STREAM_CHUNK_BYTES)];
            let mut total = 0u64;
            loop {
                let n = match reader.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => n,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(CasError::Input(e)),
                };
                hasher.update(&buf[..n]);
                out.write_all(&buf[..n]).map_err(CasError::Storage)?;
                total += n as u64;
            }
            out.sync_all().map_err(CasError::Storage)?;
            Ok((Cid::from_sha256(hasher.finalize().into()), total))
        })();
        match result {
            Ok((cid, total)) => {
                drop(out);
                self.commit_staged(&staged, &cid)?;
                Ok((cid, total))
            }
            Err(e) => {
                drop(out);
                let _ = fs::remove_file(&staged);
                Err(e)
            }
        }
    }

    fn read_object(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        match fs::read(self.object_path(cid)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(CasError::NotFound(cid.to_string()))
            }
            Err(e) => Err(CasError::Storage(e)),
        }
    }

    fn check_local(&self, cid: &Cid) -> Result<(), CasError> {
        if cid.backend() != BackendKind::Local {
            return Err(CasError::InvalidCid(cid.to_string()));
        }
        Ok(())
    }
}

impl ContentStore for LocalStore {
    fn kind(&self) -> BackendKind {
        BackendKind::Local
    }

    fn put(&self, content: &[u8]) -> Result<(Cid, UploadMetrics), CasError> {
        let start = Instant::now();
        let (cid, size) = self.put_stream(&mut &content[..], content.len())?;
        Ok((cid, UploadMetrics::from_upload(size, start.elapsed().as_secs_f64())))
    }

    fn put_file(&self, path: &Path) -> Result<(Cid, UploadMetrics), CasError> {
        let mut file = File::open(path).map_err(CasError::Input)?;
        let start = Instant::now();
        let (cid, size) = self.put_stream(&mut file, STREAM_CHUNK_BYTES)?;
        Ok((cid, UploadMetrics::from_upload(size, start.elapsed().as_secs_f64())))
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        self.check_local(cid)?;
        let bytes = self.read_object(cid)?;
        let digest: [u8; 32] = Sha256::digest(&bytes).into();
        if Some(digest) != cid.sha256_digest() {
            return Err(CasError::IntegrityMismatch(cid.to_string()));
        }
        Ok(bytes)
    }

    fn fetch_raw(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        self.check_local(cid)?;
        self.read_object(cid)
    }

    fn pin(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        self.check_local(cid)?;
        // Existence check before touching the journal.
        self.stat(cid)?;
        {
            let mut pins = self.pins.lock().expect("pin set poisoned");
            if !pins.pinned.contains(cid.as_str()) {
                let rec = PinRecord {
                    cid: cid.to_string(),
                    pinned_at_ms: crate::now_ms(),
                };
                let line = serde_json::to_string(&rec).expect("pin record serializes");
                append_line_durable(&mut pins.journal, &line).map_err(CasError::Storage)?;
                pins.pinned.insert(cid.to_string());
            }
        }
        self.stat(cid)
    }

    fn stat(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        self.check_local(cid)?;
        let meta = match fs::metadata(self.object_path(cid)) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(CasError::NotFound(cid.to_string()))
            }
            Err(e) => return Err(CasError::Storage(e)),
        };
        let created_at: DateTime<Utc> = meta
            .modified()
            .map(DateTime::<Utc>::from)
            .unwrap_or_else(|_| Utc::now());
        let created_at = DateTime::from_timestamp_millis(created_at.timestamp_millis())
            .unwrap_or(created_at);
        let pinned = self
            .pins
            .lock()
            .expect("pin set poisoned")
            .pinned
            .contains(cid.as_str());
        Ok(ContentStat {
            size_bytes: meta.len(),
            pinned,
            created_at,
        })
    }

    fn parse_cid(&self, text: &str) -> Result<Cid, CasError> {
        Cid::parse_local(text)
    }
}
