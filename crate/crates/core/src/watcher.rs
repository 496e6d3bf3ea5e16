//! Polling directory watcher.
//!
//! Every `scan_interval_s` the watched tree is walked and each regular file
//! is keyed by `(canonical path, size, mtime)`. Keys already in the seen set
//! are skipped, so an unchanged file is emitted once while an edited file is
//! emitted again. A file whose size or mtime moves between two stats taken
//! `stability_probe_ms` apart is still being written and is left for the
//! next scan.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

#[derive(Debug, thiserror::Error)]
pub enum WatchError {
    #[error("watched directory {0} is missing")]
    RootMissing(PathBuf),
    #[error("watched directory {path} is unreadable: {source}")]
    RootUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid watch config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatchConfig {
    pub root_dir: PathBuf,
    pub scan_interval_s: f64,
    /// `None` watches until stopped externally.
    pub stop_after_s: Option<f64>,
    pub ignore_hidden: bool,
    /// Gap between the two stats of the stability check; 0 disables it.
    pub stability_probe_ms: u64,
}

impl Default for WatchConfig {
    fn default() -> Self {
        WatchConfig {
            root_dir: PathBuf::from("."),
            scan_interval_s: 5.0,
            stop_after_s: Some(1200.0),
            ignore_hidden: true,
            stability_probe_ms: 100,
        }
    }
}

impl WatchConfig {
    pub fn new(root_dir: impl Into<PathBuf>) -> WatchConfig {
        WatchConfig {
            root_dir: root_dir.into(),
            ..WatchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), WatchError> {
        if !self.scan_interval_s.is_finite() || self.scan_interval_s <= 0.0 {
            return Err(WatchError::InvalidConfig(format!(
                "scan_interval_s must be positive, got {}",
                self.scan_interval_s
            )));
        }
        if let Some(stop) = self.stop_after_s {
            if stop.is_nan() || stop <= 0.0 {
                return Err(WatchError::InvalidConfig(format!(
                    "stop_after_s must be positive, got {stop}"
                )));
            }
            if self.scan_interval_s >= stop {
                return Err(WatchError::InvalidConfig(format!(
                    "scan_interval_s ({}) must be below stop_after_s ({stop})",
                    self.scan_interval_s
                )));
            }
        }
        Ok(())
    }
}

/// A newly detected (or changed) file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEvent {
    pub path: PathBuf,
    pub size_bytes: u64,
    pub detected_at: DateTime<Utc>,
    pub dedup_key: String,
}

/// Keys of files already emitted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeenSet(HashSet<String>);

impl SeenSet {
    pub fn new() -> SeenSet {
        SeenSet::default()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains(key)
    }

    pub fn insert(&mut self, key: impl Into<String>) -> bool {
        self.0.insert(key.into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for SeenSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        SeenSet(iter.into_iter().map(Into::into).collect())
    }
}

/// Dedup identity of a file.
pub fn dedup_key(canonical_path: &Path, size_bytes: u64, mtime: SystemTime) -> String {
    let mtime_ns = match mtime.duration_since(UNIX_EPOCH) {
        Ok(d) => d.as_nanos() as i128,
        Err(e) => -(e.duration().as_nanos() as i128),
    };
    format!("{}|{}|{}", canonical_path.display(), size_bytes, mtime_ns)
}

/// Cloneable stop flag whose waits wake up as soon as it is raised.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<(Mutex<bool>, Condvar)>);

impl StopSignal {
    pub fn new() -> StopSignal {
        StopSignal::default()
    }

    pub fn stop(&self) {
        let (lock, cvar) = &*self.0;
        *lock.lock().unwrap() = true;
        cvar.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        *self.0 .0.lock().unwrap()
    }

    /// Sleeps for up to `timeout`; returns `true` if stopped.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        let (lock, cvar) = &*self.0;
        let guard = lock.lock().unwrap();
        let (guard, _) = cvar
            .wait_timeout_while(guard, timeout, |stopped| !*stopped)
            .unwrap();
        *guard
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchSummary {
    pub scans: u64,
    pub events: u64,
}

fn is_hidden(name: &std::ffi::OsStr) -> bool {
    name.to_str().is_some_and(|s| s.starts_with('.'))
}

struct Candidate {
    path: PathBuf,
    size: u64,
    mtime: SystemTime,
    key: String,
}

fn stat_file(path: &Path) -> std::io::Result<(u64, SystemTime)> {
    let meta = std::fs::metadata(path)?;
    Ok((meta.len(), meta.modified()?))
}

/// One pass over `config.root_dir`. Emits every stable regular file whose
/// key is not yet in `seen`, and records those keys.
pub fn scan_once(config: &WatchConfig, seen: &mut SeenSet) -> Result<Vec<FileEvent>, WatchError> {
    let root = &config.root_dir;
    match std::fs::metadata(root) {
        Ok(m) if m.is_dir() => {}
        Ok(_) => return Err(WatchError::RootMissing(root.clone())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(WatchError::RootMissing(root.clone()))
        }
        Err(source) => {
            return Err(WatchError::RootUnreadable {
                path: root.clone(),
                source,
            })
        }
    }

    let mut candidates = Vec::new();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !(config.ignore_hidden && is_hidden(e.file_name())));
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                if e.depth() == 0 {
                    let source = e
                        .into_io_error()
                        .unwrap_or_else(|| std::io::Error::other("walk failed"));
                    if source.kind() == std::io::ErrorKind::NotFound {
                        return Err(WatchError::RootMissing(root.clone()));
                    }
                    return Err(WatchError::RootUnreadable { path: root.clone(), source });
                }
                log::warn!("skipping unreadable entry: {e}");
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let (size, mtime) = match stat_file(path) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        // Unreadable files would only fail later at upload time.
        if let Err(e) = std::fs::File::open(path) {
            log::warn!("skipping unreadable {}: {e}", path.display());
            continue;
        }
        let canonical = match std::fs::canonicalize(path) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let key = dedup_key(&canonical, size, mtime);
        if seen.contains(&key) {
            continue;
        }
        candidates.push(Candidate { path: canonical, size, mtime, key });
    }

    if !candidates.is_empty() && config.stability_probe_ms > 0 {
        std::thread::sleep(Duration::from_millis(config.stability_probe_ms));
        candidates.retain(|c| match stat_file(&c.path) {
            Ok((size, mtime)) if size == c.size && mtime == c.mtime => true,
            Ok(_) => {
                log::debug!("{} still changing; deferring", c.path.display());
                false
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", c.path.display());
                false
            }
        });
    }

    let detected_at = DateTime::from_timestamp_millis(Utc::now().timestamp_millis())
        .expect("current time representable");
    Ok(candidates
        .into_iter()
        .filter(|c| seen.insert(c.key.clone()))
        .map(|c| FileEvent {
            path: c.path,
            size_bytes: c.size,
            detected_at,
            dedup_key: c.key,
        })
        .collect())
}

/// Scans every `scan_interval_s` until `stop_after_s` elapses or `stop` is
/// raised, handing each event to `sink` as soon as it is found.
pub fn watch(
    config: &WatchConfig,
    seen: &mut SeenSet,
    mut sink: impl FnMut(FileEvent),
    stop: &StopSignal,
) -> Result<WatchSummary, WatchError> {
    config.validate()?;
    let started = Instant::now();
    let deadline = config
        .stop_after_s
        .map(|s| started + Duration::from_secs_f64(s));
    let interval = Duration::from_secs_f64(config.scan_interval_s);
    let mut summary = WatchSummary::default();

    loop {
        let events = scan_once(config, seen)?;
        summary.scans += 1;
        for ev in events {
            summary.events += 1;
            sink(ev);
        }

        let now = Instant::now();
        let wait = match deadline {
            Some(d) if now >= d => break,
            Some(d) => interval.min(d - now),
            None => interval,
        };
        if stop.wait_timeout(wait) {
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
    }
    log::info!(
        "stopped watching {} after {} scans, {} events",
        config.root_dir.display(),
        summary.scans,
        summary.events
    );
    Ok(summary)
}

/// Human-readable size with two decimals: "500.00 Bytes", "1.50 KB".
pub fn format_file_size(bytes: u64) -> String {
    const UNITS: [&str; 4] = ["Bytes", "KB", "MB", "GB"];
    let mut value = bytes as f64;
    let mut unit = 0;
    while value >= 1024.0 && unit < UNITS.len() - 1 {
        value /= 1024.0;
        unit += 1;
    }
    format!("{value:.2} {}", UNITS[unit])
}
