use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use cidledger::cas::{CasError, ContentStat, LocalStore};
use cidledger::ledger::{Address, GasSchedule, Ledger};
use cidledger::lightchain::Chain;
use cidledger::metrics::{read_report, FakeProbe, Table7Row, UploadMetrics};
use cidledger::pipeline::{
    self, PipelineConfig, RetrievalVerdict, Stage, Stores, Target, CAS_DIR,
};
use cidledger::watcher::{dedup_key, FileEvent, StopSignal, WatchConfig};
use cidledger::{BackendKind, Cid, ContentStore};
use proptest::prelude::*;

fn config(root: &Path) -> PipelineConfig {
    let watch_dir = root.join("watch");
    std::fs::create_dir_all(&watch_dir).unwrap();
    PipelineConfig {
        watch: WatchConfig {
            scan_interval_s: 0.05,
            stop_after_s: Some(0.5),
            stability_probe_ms: 10,
            ..WatchConfig::new(&watch_dir)
        },
        state_dir: root.join("state"),
        report_dir: root.join("reports"),
        ..PipelineConfig::default()
    }
}

fn probe() -> FakeProbe {
    FakeProbe::new(vec![12.0, 18.0], vec![64.0, 65.0])
}

fn user(cfg: &PipelineConfig) -> Address {
    Address::parse(&cfg.user_address).unwrap()
}

#[test]
fn every_cid_resolves_to_source_bytes_and_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let mut sources = Vec::new();
    for i in 0..4 {
        let path = cfg.watch.root_dir.join(format!("f{i}.bin"));
        let bytes = vec![i as u8; 1000 * (i + 1)];
        std::fs::write(&path, &bytes).unwrap();
        sources.push((std::fs::canonicalize(&path).unwrap(), bytes));
    }
    let report = pipeline::run_pipeline_with_probe(&cfg, vec!["test".into()], &StopSignal::new(), &probe()).unwrap();
    assert_eq!(report.files.len(), 4);
    assert_eq!(report.exit_code(), 0);

    let stores = Stores::open(&cfg, &cfg.register_on).unwrap();
    for f in &report.files {
        let expected = &sources.iter().find(|(p, _)| *p == f.path).unwrap().1;
        let cid = stores.cas.parse_cid(f.cid.as_deref().unwrap()).unwrap();
        assert_eq!(&stores.cas.get(&cid).unwrap(), expected);
    }
    let ledger = stores.ledger.as_ref().unwrap().lock().unwrap();
    assert_eq!(ledger.get_data_count(&user(&cfg)), 4);
    assert_eq!(stores.chain.as_ref().unwrap().lock().unwrap().len(), 5);
    let blocks: Vec<u64> = report.files.iter().map(|f| f.receipt.as_ref().unwrap().block_number).collect();
    assert_eq!(blocks, [2, 3, 4, 5]);

    let rows: Vec<Table7Row> = read_report(&cfg.report_dir.join("table7_upload.csv")).unwrap();
    assert_eq!(rows.len(), 4);
}

#[test]
fn run_report_is_ndjson_with_summary_echoing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    std::fs::write(cfg.watch.root_dir.join("x"), b"x").unwrap();
    pipeline::run_pipeline_with_probe(&cfg, vec!["--tdp".into(), "15".into()], &StopSignal::new(), &probe()).unwrap();
    let text = std::fs::read_to_string(cfg.report_dir.join(pipeline::RUN_REPORT)).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["type"], "file");
    assert_eq!(lines[1]["type"], "summary");
    assert_eq!(lines[1]["invocation"], serde_json::json!(["--tdp", "15"]));
    assert_eq!(lines[1]["config"]["tdp_watts"], 15.0);
}

#[test]
fn unchanged_file_processed_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.watch.stop_after_s = Some(0.6);
    std::fs::write(cfg.watch.root_dir.join("same.dat"), b"unchanging").unwrap();
    let report = pipeline::run_pipeline_with_probe(&cfg, vec![], &StopSignal::new(), &probe()).unwrap();
    assert!(report.watch.scans >= 3, "scans: {}", report.watch.scans);
    assert_eq!(report.files.len(), 1);
}

#[test]
fn retrieval_is_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    std::fs::write(cfg.watch.root_dir.join("r.dat"), b"read me").unwrap();
    pipeline::run_pipeline_with_probe(&cfg, vec![], &StopSignal::new(), &probe()).unwrap();

    let snapshot = || {
        let ledger = Ledger::open(&cfg.ledger_path()).unwrap();
        let chain = Chain::load(&cfg.chain_path()).unwrap();
        (
            ledger.get_data_count(&user(&cfg)),
            ledger.block_height(),
            chain.len(),
            chain.last_block().block_hash.clone(),
            std::fs::read(cfg.ledger_path()).unwrap(),
            std::fs::read(cfg.chain_path()).unwrap(),
        )
    };
    let before = snapshot();
    let stores = Stores::open(&cfg, &BTreeSet::new()).unwrap();
    for _ in 0..3 {
        let r = pipeline::retrieve_by_index(&stores, &user(&cfg), 0).unwrap();
        assert_eq!(r.verdict, RetrievalVerdict::Verified);
    }
    drop(stores);
    assert_eq!(snapshot(), before);
}

/// Local store whose reads fail, to force a lightchain failure after the
/// ledger has committed.
struct UnreadableStore(LocalStore);

impl ContentStore for UnreadableStore {
    fn kind(&self) -> BackendKind {
        self.0.kind()
    }
    fn put(&self, content: &[u8]) -> Result<(Cid, UploadMetrics), CasError> {
        self.0.put(content)
    }
    fn put_file(&self, path: &Path) -> Result<(Cid, UploadMetrics), CasError> {
        self.0.put_file(path)
    }
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        Err(CasError::Unreachable(format!("read of {cid} refused")))
    }
    fn pin(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        self.0.pin(cid)
    }
    fn stat(&self, cid: &Cid) -> Result<ContentStat, CasError> {
        self.0.stat(cid)
    }
    fn parse_cid(&self, text: &str) -> Result<Cid, CasError> {
        self.0.parse_cid(text)
    }
}

fn event_for(path: &Path) -> FileEvent {
    let meta = std::fs::metadata(path).unwrap();
    FileEvent {
        path: path.to_path_buf(),
        size_bytes: meta.len(),
        detected_at: chrono::Utc::now(),
        dedup_key: dedup_key(path, meta.len(), meta.modified().unwrap()),
    }
}

#[test]
fn chain_failure_after_ledger_commit_is_a_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let stores = Stores {
        cas: Arc::new(UnreadableStore(LocalStore::open(dir.path().join("cas")).unwrap())),
        ledger: Some(Mutex::new(Ledger::deploy(GasSchedule::default()).0)),
        chain: Some(Mutex::new(Chain::in_memory())),
    };
    let path = dir.path().join("f");
    std::fs::write(&path, b"content").unwrap();
    let targets: BTreeSet<Target> = [Target::Ledger, Target::Lightchain].into_iter().collect();
    let user = Address::parse(pipeline::DEFAULT_USER).unwrap();
    let out = pipeline::process_file(&stores, &targets, &user, &probe(), 15.0, &event_for(&path));
    assert_eq!(out.failure.as_ref().unwrap().stage, Stage::Lightchain);
    assert!(out.receipt.is_some());
    assert!(out.discrepancy.is_some());
    assert_eq!(stores.ledger.as_ref().unwrap().lock().unwrap().get_data_count(&user), 1);
    assert_eq!(stores.chain.as_ref().unwrap().lock().unwrap().len(), 1);
}

#[test]
fn resumed_file_is_not_registered_twice() {
    let dir = tempfile::tempdir().unwrap();
    let stores = Stores {
        cas: Arc::new(LocalStore::open(dir.path().join("cas")).unwrap()),
        ledger: Some(Mutex::new(Ledger::deploy(GasSchedule::default()).0)),
        chain: Some(Mutex::new(Chain::in_memory())),
    };
    let path = dir.path().join("f");
    std::fs::write(&path, b"content").unwrap();
    let user = Address::parse(pipeline::DEFAULT_USER).unwrap();
    let ledger_only: BTreeSet<Target> = [Target::Ledger].into_iter().collect();
    let both: BTreeSet<Target> = [Target::Ledger, Target::Lightchain].into_iter().collect();
    // First attempt got as far as the ledger only.
    let first = pipeline::process_file(&stores, &ledger_only, &user, &probe(), 15.0, &event_for(&path));
    let second = pipeline::process_file(&stores, &both, &user, &probe(), 15.0, &event_for(&path));
    assert!(second.succeeded());
    assert_eq!(second.already_registered, [Target::Ledger]);
    assert_eq!(second.receipt, first.receipt);
    assert_eq!(stores.ledger.as_ref().unwrap().lock().unwrap().get_data_count(&user), 1);
    assert_eq!(stores.chain.as_ref().unwrap().lock().unwrap().len(), 2);
}

fn corrupt_case(content: Vec<u8>, flip_at: usize, mask: u8) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let file = dir.path().join("payload");
    std::fs::write(&file, &content).unwrap();
    let outcomes = pipeline::upload_files(&cfg, &[file], &probe()).unwrap();
    let cid = Cid::parse_local(outcomes[0].cid.as_deref().unwrap()).unwrap();
    let object: PathBuf = LocalStore::open(cfg.state_dir.join(CAS_DIR)).unwrap().object_path(&cid);
    let mut bytes = std::fs::read(&object).unwrap();
    let i = flip_at % bytes.len();
    bytes[i] ^= mask;
    std::fs::write(&object, &bytes).unwrap();
    let stores = Stores::open(&cfg, &BTreeSet::new()).unwrap();
    let r = pipeline::retrieve_by_index(&stores, &user(&cfg), 0).unwrap();
    assert_eq!(r.verdict, RetrievalVerdict::Tampered);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corrupted_object_retrieves_as_tampered(
        content in proptest::collection::vec(any::<u8>(), 1..4096),
        flip_at in any::<usize>(),
        mask in 1u8..=255,
    ) {
        corrupt_case(content, flip_at, mask);
    }
}
