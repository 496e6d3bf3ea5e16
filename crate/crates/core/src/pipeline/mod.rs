//! Orchestration: watch → upload + pin → register → report.
//!
//! Registration order is ledger first, then lightchain. Both stores are
//! append-only, so a lightchain failure after a ledger commit is not rolled
//! back; it is recorded as a discrepancy on the file's outcome instead.

mod bench;
mod gen;

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::cas::{BackendKind, CasError, Cid, ContentStore, LocalStore, RemoteConfig, RemoteStore};
use crate::ledger::{Address, GasSchedule, Ledger, LedgerError, TxReceipt};
use crate::lightchain::{Block, Chain, ChainError};
use crate::metrics::{
    self, EnergyRow, EnergySample, MetricsError, Operation, ProcfsProbe, ResourceProbe, Table11Row,
    Table7Row, Table8Row, UploadMetrics, BYTES_PER_MB, DEFAULT_TDP_WATTS,
};
use crate::util::append_line_durable;
use crate::watcher::{self, FileEvent, SeenSet, StopSignal, WatchConfig, WatchError, WatchSummary};
use crate::sha256_hex;

pub use bench::{
    bench, bench_with_probe, compare_phases, median, run_phase, BenchConfig, BenchOutput, Phase,
    PhaseComparison, IDENTITY_REL_TOL,
};
pub use gen::{
    file_name_for, gen_files, gen_sizes, size_sequence, write_filled, FillMode, GenError,
    GeneratedFile, GeneratorConfig, MIB,
};

pub const LEDGER_JOURNAL: &str = "ledger.jsonl";
pub const CHAIN_JOURNAL: &str = "chain.jsonl";
pub const CAS_DIR: &str = "cas";
pub const RUN_REPORT: &str = "run_report.jsonl";

/// Default account used when none is configured.
pub const DEFAULT_USER: &str = "0x24d36be000000000000000000000000000421fff";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("content backend unavailable: {0}")]
    Backend(#[source] CasError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Watch(#[from] WatchError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("content store error: {0}")]
    Cas(#[source] CasError),
    #[error("no ledger journal in {0}")]
    NoLedger(PathBuf),
    #[error("writing report: {0}")]
    Report(String),
    #[error("metric identity violated: {0}")]
    Identity(String),
}

impl PipelineError {
    /// Exit code for the CLI: 2 for configuration/backend/startup failures.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Report(e.to_string())
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Identity(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Ledger,
    Lightchain,
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ledger" => Ok(Target::Ledger),
            "lightchain" | "chain" => Ok(Target::Lightchain),
            other => Err(format!("unknown target `{other}` (expected ledger or lightchain)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub watch: WatchConfig,
    pub backend: BackendKind,
    pub remote: RemoteConfig,
    pub register_on: BTreeSet<Target>,
    pub gas_schedule: GasSchedule,
    pub tdp_watts: f64,
    /// Holds the local CAS and both journals.
    pub state_dir: PathBuf,
    pub report_dir: PathBuf,
    pub user_address: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            watch: WatchConfig::default(),
            backend: BackendKind::Local,
            remote: RemoteConfig::default(),
            register_on: [Target::Ledger, Target::Lightchain].into_iter().collect(),
            gas_schedule: GasSchedule::default(),
            tdp_watts: DEFAULT_TDP_WATTS,
            state_dir: PathBuf::from("state"),
            report_dir: PathBuf::from("reports"),
            user_address: DEFAULT_USER.to_string(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<Address, PipelineError> {
        if self.register_on.is_empty() {
            return Err(PipelineError::Config("register_on must name at least one target".into()));
        }
        if self.tdp_watts.is_nan() || self.tdp_watts <= 0.0 {
            return Err(PipelineError::Config(format!("tdp_watts must be positive, got {}", self.tdp_watts)));
        }
        self.watch.validate()?;
        Address::parse(&self.user_address).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.state_dir.join(LEDGER_JOURNAL)
    }

    pub fn chain_path(&self) -> PathBuf {
        self.state_dir.join(CHAIN_JOURNAL)
    }
}

/// Opened backing stores for one state directory.
pub struct Stores {
    pub cas: Arc<dyn ContentStore>,
    pub ledger: Option<Mutex<Ledger>>,
    pub chain: Option<Mutex<Chain>>,
}

impl Stores {
    /// Opens the content store and the journals named in `targets`. Journals
    /// that already exist on disk are opened as well so retrieval can use them.
    pub fn open(cfg: &PipelineConfig, targets: &BTreeSet<Target>) -> Result<Stores, PipelineError> {
        std::fs::create_dir_all(&cfg.state_dir)
            .map_err(|e| PipelineError::Config(format!("state dir {}: {e}", cfg.state_dir.display())))?;
        let cas = open_cas(cfg.backend, &cfg.remote, &cfg.state_dir.join(CAS_DIR))?;
        let ledger_path = cfg.ledger_path();
        let ledger = if targets.contains(&Target::Ledger) || ledger_path.exists() {
            Some(Mutex::new(Ledger::open_or_deploy(cfg.gas_schedule, &ledger_path)?))
        } else {
            None
        };
        let chain_path = cfg.chain_path();
        let chain = if targets.contains(&Target::Lightchain) || chain_path.exists() {
            Some(Mutex::new(Chain::open_or_create(&chain_path)?))
        } else {
            None
        };
        Ok(Stores { cas, ledger, chain })
    }
}

/// Opens a backend; the remote one must answer before it is accepted.
pub fn open_cas(backend: BackendKind, remote: &RemoteConfig, local_root: &Path) -> Result<Arc<dyn ContentStore>, PipelineError> {
    Ok(match backend {
        BackendKind::Local => Arc::new(LocalStore::open(local_root).map_err(PipelineError::Backend)?),
        BackendKind::Remote => {
            let store = RemoteStore::new(remote).map_err(PipelineError::Backend)?;
            store.ping().map_err(PipelineError::Backend)?;
            Arc::new(store)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Upload,
    Pin,
    Ledger,
    Lightchain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFailure {
    pub stage: Stage,
    pub error: String,
}

/// What happened to one detected file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileOutcome {
    pub path: PathBuf,
    pub dedup_key: String,
    pub size_bytes: u64,
    pub cid: Option<String>,
    pub metrics: Option<UploadMetrics>,
    pub energy: Option<EnergySample>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub receipt: Option<TxReceipt>,
    pub store_time_ms: Option<u64>,
    pub block: Option<Block>,
    pub failure: Option<FileFailure>,
    /// Set when the ledger committed but the lightchain append failed.
    pub discrepancy: Option<String>,
    /// Targets where this CID was already registered, typically by a run
    /// that was interrupted before recording the file as done.
    #[serde(default)]
    pub already_registered: Vec<Target>,
}

impl FileOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub config: PipelineConfig,
    /// Extra invocation details (CLI flags) echoed for reproducibility.
    pub invocation: Vec<String>,
    pub watch: WatchSummary,
    pub files: Vec<FileOutcome>,
    pub failures: usize,
    /// A mid-run fatal condition, such as the watched directory vanishing.
    pub fatal: Option<String>,
    pub reports: Vec<PathBuf>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.fatal.is_some() {
            2
        } else if self.failures > 0 {
            1
        } else {
            0
        }
    }

    pub fn cids(&self) -> Vec<&str> {
        self.files.iter().filter_map(|f| f.cid.as_deref()).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ReportLine {
    File(Box<FileOutcome>),
    Summary(Box<RunReport>),
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn now_utc() -> DateTime<Utc> {
    DateTime::from_timestamp_millis(Utc::now().timestamp_millis()).expect("representable")
}

/// Uploads, pins and registers one file.
pub fn process_file(
    stores: &Stores,
    targets: &BTreeSet<Target>,
    user: &Address,
    probe: &dyn ResourceProbe,
    tdp_watts: f64,
    event: &FileEvent,
) -> FileOutcome {
    let started_at = now_utc();
    let mut out = FileOutcome {
        path: event.path.clone(),
        dedup_key: event.dedup_key.clone(),
        size_bytes: event.size_bytes,
        cid: None,
        metrics: None,
        energy: None,
        started_at,
        finished_at: started_at,
        receipt: None,
        store_time_ms: None,
        block: None,
        failure: None,
        discrepancy: None,
        already_registered: Vec::new(),
    };
    let fail = |mut out: FileOutcome, stage, error: String| {
        log::error!("{}: {stage:?} failed: {error}", out.path.display());
        out.failure = Some(FileFailure { stage, error });
        out.finished_at = now_utc();
        out
    };

    let measured = match metrics::measure_upload(&event.path, stores.cas.as_ref(), probe, tdp_watts) {
        Ok(m) => m,
        Err(e) => return fail(out, Stage::Upload, e.to_string()),
    };
    out.size_bytes = measured.metrics.size_bytes;
    out.cid = Some(measured.cid.to_string());
    out.metrics = Some(measured.metrics);
    out.energy = measured.energy;
    let cid = measured.cid;
    log::info!(
        "uploaded {} ({}) as {cid}",
        event.path.display(),
        watcher::format_file_size(out.size_bytes)
    );

    if let Err(e) = stores.cas.pin(&cid) {
        return fail(out, Stage::Pin, e.to_string());
    }

    // Registration is idempotent per CID so a resumed run completes a file
    // that an interrupted run left half-registered instead of duplicating it.
    if targets.contains(&Target::Ledger) {
        if let Some(ledger) = &stores.ledger {
            let submitted = Instant::now();
            let mut ledger = ledger.lock().expect("ledger lock poisoned");
            let existing = ledger
                .find_record(user, cid.as_str())
                .and_then(|(_, r)| ledger.receipt(r.block_number).cloned());
            if let Some(receipt) = existing {
                out.receipt = Some(receipt);
                out.already_registered.push(Target::Ledger);
            } else {
                match ledger.store_data_submitted_at(user, cid.as_str(), submitted) {
                    Ok((receipt, record)) => {
                        out.store_time_ms = Some(record.store_time_ms);
                        out.receipt = Some(receipt);
                    }
                    Err(e) => return fail(out, Stage::Ledger, e.to_string()),
                }
            }
        }
    }

    if targets.contains(&Target::Lightchain) {
        if let Some(chain) = &stores.chain {
            let mut chain = chain.lock().expect("chain lock poisoned");
            if let Some(block) = chain.find_by_cid(cid.as_str()) {
                out.block = Some(block.clone());
                out.already_registered.push(Target::Lightchain);
            } else {
                match chain.save_to_chain(&cid, stores.cas.as_ref()) {
                    Ok(block) => out.block = Some(block),
                    Err(e) => {
                        drop(chain);
                        if out.receipt.is_some() {
                            out.discrepancy =
                                Some(format!("registered on ledger but not on lightchain: {e}"));
                        }
                        return fail(out, Stage::Lightchain, e.to_string());
                    }
                }
            }
        }
    }
    out.finished_at = now_utc();
    out
}

/// Dedup keys of files completed by earlier runs, read from the run report.
fn completed_keys(report_path: &Path) -> SeenSet {
    let Ok(file) = File::open(report_path) else {
        return SeenSet::new();
    };
    BufReader::new(file)
        .lines()
        .map_while(Result::ok)
        .filter_map(|line| match serde_json::from_str::<ReportLine>(&line) {
            Ok(ReportLine::File(f)) if f.succeeded() => Some(f.dedup_key),
            _ => None,
        })
        .collect()
}

/// Runs the watch → upload → register loop until the watcher stops, then
/// writes the CSV reports. Per-file failures are recorded, not fatal.
pub fn run_pipeline(cfg: &PipelineConfig, invocation: Vec<String>, stop: &StopSignal) -> Result<RunReport, PipelineError> {
    run_pipeline_with_probe(cfg, invocation, stop, &ProcfsProbe::new())
}

pub fn run_pipeline_with_probe(
    cfg: &PipelineConfig,
    invocation: Vec<String>,
    stop: &StopSignal,
    probe: &dyn ResourceProbe,
) -> Result<RunReport, PipelineError> {
    let user = cfg.validate()?;
    if !cfg.watch.root_dir.is_dir() {
        return Err(PipelineError::Watch(WatchError::RootMissing(cfg.watch.root_dir.clone())));
    }
    let stores = Stores::open(cfg, &cfg.register_on)?;
    std::fs::create_dir_all(&cfg.report_dir)
        .map_err(|e| PipelineError::Report(format!("{}: {e}", cfg.report_dir.display())))?;
    let report_path = cfg.report_dir.join(RUN_REPORT);
    let mut report_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&report_path)
        .map_err(|e| PipelineError::Report(format!("{}: {e}", report_path.display())))?;
    let mut seen = completed_keys(&report_path);

    let started_at = now_utc();
    let (tx, rx) = mpsc::channel::<FileEvent>();
    let watch_cfg = cfg.watch.clone();
    let watch_stop = stop.clone();
    let watcher = std::thread::spawn(move || {
        watcher::watch(&watch_cfg, &mut seen, |ev| {
            let _ = tx.send(ev);
        }, &watch_stop)
    });

    let mut files = Vec::new();
    for event in rx.iter() {
        if stop.is_stopped() {
            // Left for the next run's rescan.
            continue;
        }
        let outcome = process_file(&stores, &cfg.register_on, &user, probe, cfg.tdp_watts, &event);
        let line = serde_json::to_string(&ReportLine::File(Box::new(outcome.clone())))
            .expect("outcome serializes");
        if let Err(e) = append_line_durable(&mut report_file, &line) {
            log::error!("could not append to run report: {e}");
        }
        files.push(outcome);
    }
    let (watch, fatal) = match watcher.join().expect("watcher thread panicked") {
        Ok(summary) => (summary, None),
        Err(e) => (WatchSummary::default(), Some(e.to_string())),
    };

    let reports = write_run_reports(&stores, &files, &cfg.report_dir)?;
    let failures = files.iter().filter(|f| !f.succeeded()).count();
    let report = RunReport {
        started_at,
        finished_at: now_utc(),
        config: cfg.clone(),
        invocation,
        watch,
        files,
        failures,
        fatal,
        reports,
    };
    let line = serde_json::to_string(&ReportLine::Summary(Box::new(report.clone())))
        .expect("report serializes");
    append_line_durable(&mut report_file, &line)
        .map_err(|e| PipelineError::Report(e.to_string()))?;
    Ok(report)
}

/// Processes explicit files without watching (the `upload` subcommand).
pub fn upload_files(cfg: &PipelineConfig, paths: &[PathBuf], probe: &dyn ResourceProbe) -> Result<Vec<FileOutcome>, PipelineError> {
    let user = cfg.validate()?;
    let stores = Stores::open(cfg, &cfg.register_on)?;
    let mut out = Vec::new();
    for path in paths {
        let (size, mtime) = match std::fs::metadata(path).and_then(|m| Ok((m.len(), m.modified()?))) {
            Ok(v) => v,
            Err(e) => {
                let now = now_utc();
                out.push(FileOutcome {
                    path: path.clone(),
                    dedup_key: String::new(),
                    size_bytes: 0,
                    cid: None,
                    metrics: None,
                    energy: None,
                    started_at: now,
                    finished_at: now,
                    receipt: None,
                    store_time_ms: None,
                    block: None,
                    failure: Some(FileFailure { stage: Stage::Upload, error: e.to_string() }),
                    discrepancy: None,
                    already_registered: Vec::new(),
                });
                continue;
            }
        };
        let canonical = std::fs::canonicalize(path).unwrap_or_else(|_| path.clone());
        let event = FileEvent {
            dedup_key: watcher::dedup_key(&canonical, size, mtime),
            path: canonical,
            size_bytes: size,
            detected_at: now_utc(),
        };
        out.push(process_file(&stores, &cfg.register_on, &user, probe, cfg.tdp_watts, &event));
    }
    Ok(out)
}

/// Writes the upload, perf, energy, ledger and chain CSVs for a run.
pub fn write_run_reports(stores: &Stores, files: &[FileOutcome], dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    use metrics::{write_report, ReportSchema};

    let ok: Vec<&FileOutcome> = files.iter().filter(|f| f.metrics.is_some()).collect();
    for f in &ok {
        let m = f.metrics.as_ref().expect("filtered");
        if !metrics::bandwidth_identity_holds(m.size_bytes, m.upload_time_s, m.bandwidth_kb_s, IDENTITY_REL_TOL) {
            return Err(PipelineError::Identity(format!("bandwidth × time ≠ size for {}", f.path.display())));
        }
    }

    let mut paths = Vec::new();
    let table7: Vec<Table7Row> = ok
        .iter()
        .map(|f| {
            let m = f.metrics.as_ref().expect("filtered");
            Table7Row {
                file_size_mb: m.size_mb(),
                uploading_time_s: m.upload_time_s,
                power_consumption_j: f.energy.as_ref().map(|e| e.energy_j),
                memory_mb: m.memory_used_mb,
            }
        })
        .collect();
    let p = dir.join(ReportSchema::UploadTable7.file_name());
    write_report(&table7, &p)?;
    paths.push(p);

    let table11: Vec<Table11Row> = ok
        .iter()
        .map(|f| {
            let m = f.metrics.as_ref().expect("filtered");
            Table11Row {
                operation: Operation::Upload,
                time_s: m.upload_time_s,
                memory_mb: m.memory_used_mb,
                bandwidth_kb_s: m.bandwidth_kb_s,
                size_mb: m.size_mb(),
                cid: f.cid.clone().unwrap_or_default(),
            }
        })
        .collect();
    let p = dir.join(ReportSchema::PerfTable11.file_name());
    write_report(&table11, &p)?;
    paths.push(p);

    let energy: Vec<EnergyRow> = ok.iter().map(|f| energy_row(f)).collect();
    let p = dir.join(ReportSchema::EnergyCsv.file_name());
    write_report(&energy, &p)?;
    paths.push(p);

    if stores.ledger.is_some() {
        let table8: Vec<Table8Row> = files
            .iter()
            .filter_map(|f| {
                let r = f.receipt.as_ref()?;
                Some(Table8Row {
                    block_number: r.block_number,
                    transaction_hash: r.tx_hash.clone(),
                    gas_cost_units: r.gas_used,
                    transaction_cost_units: r.tx_cost_units,
                    retrieval_time_ms: None,
                    ipfs_hash: f.cid.clone().unwrap_or_default(),
                })
            })
            .collect();
        let p = dir.join(ReportSchema::LedgerTable8.file_name());
        write_report(&table8, &p)?;
        paths.push(p);
    }
    if let Some(chain) = &stores.chain {
        let rows = chain.lock().expect("chain lock poisoned").table12_rows(stores.cas.as_ref());
        let p = dir.join(ReportSchema::ChainTable12.file_name());
        write_report(&rows, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

fn energy_row(f: &FileOutcome) -> EnergyRow {
    let m = f.metrics.as_ref();
    EnergyRow {
        file: f
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        file_size_mb: f.size_bytes as f64 / BYTES_PER_MB,
        start_time: rfc3339(f.started_at),
        end_time: rfc3339(f.finished_at),
        duration_s: f
            .energy
            .as_ref()
            .map(|e| e.duration_s)
            .or(m.map(|m| m.upload_time_s))
            .unwrap_or(0.0),
        initial_cpu_pct: f.energy.as_ref().map(|e| e.initial_cpu_pct),
        final_cpu_pct: f.energy.as_ref().map(|e| e.final_cpu_pct),
        average_cpu_pct: f.energy.as_ref().map(|e| e.avg_cpu_pct),
        energy_j: f.energy.as_ref().map(|e| e.energy_j),
        cid: f.cid.clone().unwrap_or_default(),
    }
}

/// Integrity verdict for a retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrievalVerdict {
    Verified,
    Tampered,
    Unavailable,
    /// No lightchain block to compare against; the bytes are returned as
    /// the backend served them.
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub cid: String,
    #[serde(skip)]
    pub bytes: Option<Vec<u8>>,
    pub verdict: RetrievalVerdict,
    /// Ledger lookup time.
    pub lookup_s: f64,
    /// Content fetch time.
    pub fetch_s: f64,
    /// Age of the ledger record at lookup time.
    pub age_ms: u64,
}

impl Retrieval {
    pub fn total_s(&self) -> f64 {
        self.lookup_s + self.fetch_s
    }
}

/// Looks up `user`'s `index`-th CID on the ledger, fetches the content and
/// checks it against the lightchain's recorded content hash when one exists.
pub fn retrieve_by_index(stores: &Stores, user: &Address, index: usize) -> Result<Retrieval, PipelineError> {
    let ledger = stores
        .ledger
        .as_ref()
        .ok_or_else(|| PipelineError::NoLedger(PathBuf::from(LEDGER_JOURNAL)))?;
    let t0 = Instant::now();
    let (cid_text, age_ms) = ledger.lock().expect("ledger lock poisoned").retrieve_data(user, index)?;
    let lookup_s = t0.elapsed().as_secs_f64();

    let expected_hash = stores.chain.as_ref().and_then(|c| {
        c.lock()
            .expect("chain lock poisoned")
            .find_by_cid(&cid_text)
            .map(|b| b.data_hash.clone())
    });

    let t1 = Instant::now();
    let (bytes, verdict) = match stores.cas.parse_cid(&cid_text) {
        Err(_) => (None, RetrievalVerdict::Unavailable),
        Ok(cid) => fetch_with_verdict(stores.cas.as_ref(), &cid, expected_hash.as_deref()),
    };
    let fetch_s = t1.elapsed().as_secs_f64();
    Ok(Retrieval {
        cid: cid_text,
        bytes,
        verdict,
        lookup_s,
        fetch_s,
        age_ms,
    })
}

fn fetch_with_verdict(cas: &dyn ContentStore, cid: &Cid, expected_hash: Option<&str>) -> (Option<Vec<u8>>, RetrievalVerdict) {
    match expected_hash {
        Some(expected) => match cas.fetch_raw(cid) {
            Ok(bytes) => {
                let verdict = if sha256_hex(&bytes) == expected {
                    RetrievalVerdict::Verified
                } else {
                    RetrievalVerdict::Tampered
                };
                (Some(bytes), verdict)
            }
            Err(_) => (None, RetrievalVerdict::Unavailable),
        },
        None => match cas.get(cid) {
            Ok(bytes) => (Some(bytes), RetrievalVerdict::Unchecked),
            Err(CasError::IntegrityMismatch(_)) => (None, RetrievalVerdict::Tampered),
            Err(_) => (None, RetrievalVerdict::Unavailable),
        },
    }
}
