use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use cidledger::cas::LocalStore;
use cidledger::ledger::{Address, Ledger};
use cidledger::lightchain::{Chain, Verdict};
use cidledger::metrics::FakeProbe;
use cidledger::pipeline::{self, PipelineConfig, CAS_DIR, DEFAULT_USER};
use cidledger::watcher::{StopSignal, WatchConfig};
use cidledger::{sha256_hex, ContentStore};

const FILES: usize = 24;

/// Writes `FILES` distinct inputs and returns sha256 → bytes.
fn populate(dir: &Path) -> HashMap<String, Vec<u8>> {
    std::fs::create_dir_all(dir).unwrap();
    (0..FILES)
        .map(|i| {
            let bytes: Vec<u8> = (0..64 * 1024).map(|j| ((i * 7919 + j) % 253) as u8).collect();
            std::fs::write(dir.join(format!("input-{i:02}.bin")), &bytes).unwrap();
            (sha256_hex(&bytes), bytes)
        })
        .collect()
}

fn journal_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}

/// Reloads both journals and checks that they hold only complete,
/// consistent registrations. Returns (ledger records, chain blocks).
fn check_state(state: &Path, sources: &HashMap<String, Vec<u8>>) -> (usize, usize) {
    let ledger = Ledger::open(&state.join(pipeline::LEDGER_JOURNAL)).expect("ledger reloads");
    let chain = Chain::load(&state.join(pipeline::CHAIN_JOURNAL)).expect("chain reloads");
    let cas = LocalStore::open(state.join(CAS_DIR)).unwrap();
    let user = Address::parse(DEFAULT_USER).unwrap();

    assert!(chain.verify_links().valid);
    assert!(chain.verify_chain(&cas).iter().all(|v| v.verdict == Verdict::Verified));

    let ledger_cids: Vec<String> = ledger.records(&user).iter().map(|r| r.ipfs_hash.clone()).collect();
    let unique: BTreeSet<&String> = ledger_cids.iter().collect();
    assert_eq!(unique.len(), ledger_cids.len(), "duplicate ledger registration");
    for cid in &ledger_cids {
        let bytes = cas.get(&cas.parse_cid(cid).unwrap()).unwrap();
        assert!(sources.contains_key(&sha256_hex(&bytes)));
    }
    // Ledger commits first, so the chain may trail it by at most the one
    // file that was in flight.
    let chain_cids: Vec<&str> = chain.blocks()[1..].iter().map(|b| b.cid.as_str()).collect();
    assert!(chain_cids.iter().all(|c| ledger_cids.iter().any(|l| l == c)));
    assert!(ledger_cids.len() - chain_cids.len() <= 1);
    (ledger_cids.len(), chain_cids.len())
}

#[test]
fn stop_signal_leaves_only_complete_entries() {
    let dir = tempfile::tempdir().unwrap();
    let sources = populate(&dir.path().join("watch"));
    let cfg = PipelineConfig {
        watch: WatchConfig {
            scan_interval_s: 0.05,
            stop_after_s: None,
            stability_probe_ms: 0,
            ..WatchConfig::new(dir.path().join("watch"))
        },
        state_dir: dir.path().join("state"),
        report_dir: dir.path().join("reports"),
        ..PipelineConfig::default()
    };
    let stop = StopSignal::new();
    let worker = {
        let (cfg, stop) = (cfg.clone(), stop.clone());
        std::thread::spawn(move || {
            pipeline::run_pipeline_with_probe(&cfg, vec![], &stop, &FakeProbe::new(vec![1.0], vec![1.0]))
        })
    };
    let deadline = Instant::now() + Duration::from_secs(30);
    while journal_lines(&cfg.report_dir.join(pipeline::RUN_REPORT)) < 2 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(2));
    }
    stop.stop();
    let report = worker.join().unwrap().unwrap();
    let (ledger_n, chain_n) = check_state(&cfg.state_dir, &sources);
    // A graceful stop finishes the current file, so nothing trails.
    assert_eq!(ledger_n, chain_n);
    assert_eq!(ledger_n, report.files.iter().filter(|f| f.succeeded()).count());
}

#[test]
fn killed_process_recovers_on_restart() {
    let bin = env!("CARGO_BIN_EXE_cidledger");
    for kill_after in [1usize, 4, 9] {
        let dir = tempfile::tempdir().unwrap();
        let watch = dir.path().join("watch");
        let sources = populate(&watch);
        let state = dir.path().join("state");
        let args = |extra: &[&str]| {
            let mut cmd = Command::new(bin);
            cmd.arg("--state-dir")
                .arg(&state)
                .arg("--report-dir")
                .arg(dir.path().join("reports"))
                .arg("watch")
                .arg(&watch)
                .args(["--interval", "0.05"])
                .args(extra)
                .env("RUST_LOG", "warn")
                .stdout(Stdio::null())
                .stderr(Stdio::null());
            cmd
        };

        let mut child = args(&["--forever"]).spawn().unwrap();
        let ledger_path = state.join(pipeline::LEDGER_JOURNAL);
        let deadline = Instant::now() + Duration::from_secs(60);
        // One deploy line plus `kill_after` stores.
        while journal_lines(&ledger_path) < kill_after + 1 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(1));
        }
        child.kill().unwrap();
        child.wait().unwrap();

        let (ledger_n, _) = check_state(&state, &sources);
        assert!(ledger_n >= kill_after && ledger_n <= FILES);

        let status = args(&["--stop-after", "1.5"]).status().unwrap();
        assert!(status.success(), "restart exit status {status}");
        let (ledger_n, chain_n) = check_state(&state, &sources);
        assert_eq!(ledger_n, FILES, "kill after {kill_after}");
        assert_eq!(chain_n, FILES, "kill after {kill_after}");
    }
}
