//! Desk-scale experiment runner: upload, register and retrieve a ladder of
//! generated files, then emit the report CSVs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{gen_sizes, open_cas, FillMode, PipelineError, DEFAULT_USER, MIB};
use crate::cas::{BackendKind, ContentStore, RemoteConfig};
use crate::ledger::{Address, GasSchedule, Ledger};
use crate::lightchain::Chain;
use crate::metrics::{
    self, write_report, EnergyRow, Operation, ProcfsProbe, ReportSchema, ResourceProbe, Table11Row,
    Table7Row, Table8Row, DEFAULT_TDP_WATTS,
};
use crate::sha256_hex;

/// Relative tolerance for `bandwidth × time = size`.
pub const IDENTITY_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes_mb: Vec<u64>,
    pub backend: BackendKind,
    pub remote: RemoteConfig,
    pub out_dir: PathBuf,
    pub fill: FillMode,
    pub tdp_watts: f64,
    /// Uploads per size; the reported row is the run with the median time.
    pub runs: usize,
}

impl BenchConfig {
    pub fn new(sizes_mb: Vec<u64>, out_dir: impl Into<PathBuf>) -> BenchConfig {
        BenchConfig {
            sizes_mb,
            backend: BackendKind::Local,
            remote: RemoteConfig::default(),
            out_dir: out_dir.into(),
            fill: FillMode::Random { seed: 0 },
            tdp_watts: DEFAULT_TDP_WATTS,
            runs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub csvs: Vec<PathBuf>,
    /// Upload-table rows in ladder order, also written to disk.
    pub upload_rows: Vec<Table7Row>,
    /// Per-size upload times of every run, in ladder order.
    pub upload_times_s: Vec<Vec<f64>>,
    pub failures: Vec<String>,
}

/// Value at the middle of the sorted sample (lower middle for even counts).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Generates files for `cfg.sizes_mb`, runs upload → pin → ledger → chain →
/// retrieve for each and writes the CSVs into `cfg.out_dir`. State lives in a
/// fresh `bench-state` directory so block numbers restart on every run.
pub fn bench(cfg: &BenchConfig) -> Result<BenchOutput, PipelineError> {
    bench_with_probe(cfg, &ProcfsProbe::new())
}

pub fn bench_with_probe(cfg: &BenchConfig, probe: &dyn ResourceProbe) -> Result<BenchOutput, PipelineError> {
    if cfg.sizes_mb.is_empty() || cfg.sizes_mb.contains(&0) {
        return Err(PipelineError::Config("bench sizes must be positive".into()));
    }
    if cfg.runs == 0 {
        return Err(PipelineError::Config("bench runs must be at least 1".into()));
    }
    let state = cfg.out_dir.join("bench-state");
    if state.exists() {
        std::fs::remove_dir_all(&state)
            .map_err(|e| PipelineError::Config(format!("clearing {}: {e}", state.display())))?;
    }
    std::fs::create_dir_all(&state)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", state.display())))?;
    let files = gen_sizes(&cfg.sizes_mb, &cfg.out_dir.join("bench-files"), cfg.fill)?;

    let cas = open_cas(cfg.backend, &cfg.remote, &state.join("cas"))?;
    let (mut ledger, _) = Ledger::deploy_journaled(GasSchedule::default(), &state.join("ledger.jsonl"))?;
    let mut chain = Chain::create(&state.join("chain.jsonl"))?;
    let user = Address::parse(DEFAULT_USER).expect("default user is valid");

    let mut out = BenchOutput {
        csvs: Vec::new(),
        upload_rows: Vec::new(),
        upload_times_s: Vec::new(),
        failures: Vec::new(),
    };
    let mut table11 = Vec::new();
    let mut table8 = Vec::new();
    let mut energy = Vec::new();

    for file in &files {
        let name = file.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut runs = Vec::with_capacity(cfg.runs);
        let mut failed = None;
        for _ in 0..cfg.runs {
            let started = Utc::now();
            match metrics::measure_upload(&file.path, cas.as_ref(), probe, cfg.tdp_watts) {
                Ok(m) => runs.push((m, started, Utc::now())),
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(e) = failed {
            out.failures.push(format!("{name}: upload: {e}"));
            continue;
        }
        out.upload_times_s.push(runs.iter().map(|(m, _, _)| m.metrics.upload_time_s).collect());
        runs.sort_by(|a, b| a.0.metrics.upload_time_s.total_cmp(&b.0.metrics.upload_time_s));
        let (measured, started, finished) = runs.swap_remove((runs.len() - 1) / 2);
        let m = &measured.metrics;
        if !metrics::bandwidth_identity_holds(m.size_bytes, m.upload_time_s, m.bandwidth_kb_s, IDENTITY_REL_TOL) {
            return Err(PipelineError::Identity(format!("bandwidth × time ≠ size for {name}")));
        }
        let cid = measured.cid.clone();

        out.upload_rows.push(Table7Row {
            file_size_mb: m.size_mb(),
            uploading_time_s: m.upload_time_s,
            power_consumption_j: measured.energy.as_ref().map(|e| e.energy_j),
            memory_mb: m.memory_used_mb,
        });
        table11.push(Table11Row {
            operation: Operation::Upload,
            time_s: m.upload_time_s,
            memory_mb: m.memory_used_mb,
            bandwidth_kb_s: m.bandwidth_kb_s,
            size_mb: m.size_mb(),
            cid: cid.to_string(),
        });
        let e = measured.energy.as_ref();
        energy.push(EnergyRow {
            file: name.clone(),
            file_size_mb: m.size_mb(),
            start_time: super::rfc3339(started),
            end_time: super::rfc3339(finished),
            duration_s: e.map(|e| e.duration_s).unwrap_or(m.upload_time_s),
            initial_cpu_pct: e.map(|e| e.initial_cpu_pct),
            final_cpu_pct: e.map(|e| e.final_cpu_pct),
            average_cpu_pct: e.map(|e| e.avg_cpu_pct),
            energy_j: e.map(|e| e.energy_j),
            cid: cid.to_string(),
        });

        if let Err(e) = cas.pin(&cid) {
            out.failures.push(format!("{name}: pin: {e}"));
            continue;
        }
        let receipt = match ledger.store_data(&user, cid.as_str()) {
            Ok((receipt, _)) => receipt,
            Err(e) => {
                out.failures.push(format!("{name}: ledger: {e}"));
                continue;
            }
        };
        if let Err(e) = chain.save_to_chain(&cid, cas.as_ref()) {
            out.failures.push(format!("{name}: lightchain: {e}"));
        }

        let index = ledger.get_data_count(&user) - 1;
        let t0 = Instant::now();
        let lookup = ledger.retrieve_data(&user, index);
        let rss0 = probe.rss_mb().ok();
        let fetched = lookup.as_ref().map_err(|e| e.to_string()).and_then(|_| {
            cas.get_timed(&cid).map_err(|e| e.to_string())
        });
        let rss1 = probe.rss_mb().ok();
        let total_ms = t0.elapsed().as_secs_f64() * 1000.0;
        match fetched {
            Ok((bytes, fetch_s)) => {
                let bw = metrics::bandwidth(bytes.len() as u64, fetch_s).unwrap_or(0.0);
                table11.push(Table11Row {
                    operation: Operation::Retrieval,
                    time_s: fetch_s,
                    memory_mb: rss0.zip(rss1).map(|(a, b)| (b - a).max(0.0)),
                    bandwidth_kb_s: bw,
                    size_mb: bytes.len() as f64 / MIB as f64,
                    cid: cid.to_string(),
                });
                table8.push(Table8Row {
                    block_number: receipt.block_number,
                    transaction_hash: receipt.tx_hash.clone(),
                    gas_cost_units: receipt.gas_used,
                    transaction_cost_units: receipt.tx_cost_units,
                    retrieval_time_ms: Some(total_ms),
                    ipfs_hash: cid.to_string(),
                });
            }
            Err(e) => {
                out.failures.push(format!("{name}: retrieve: {e}"));
                table8.push(Table8Row {
                    block_number: receipt.block_number,
                    transaction_hash: receipt.tx_hash.clone(),
                    gas_cost_units: receipt.gas_used,
                    transaction_cost_units: receipt.tx_cost_units,
                    retrieval_time_ms: None,
                    ipfs_hash: cid.to_string(),
                });
            }
        }
    }

    let dir = &cfg.out_dir;
    let mut emit = |schema: ReportSchema, written: Result<usize, csv::Error>| -> Result<(), PipelineError> {
        written?;
        out.csvs.push(dir.join(schema.file_name()));
        Ok(())
    };
    let upload_rows = out.upload_rows.clone();
    emit(ReportSchema::UploadTable7, write_report(&upload_rows, &dir.join(ReportSchema::UploadTable7.file_name())))?;
    emit(ReportSchema::PerfTable11, write_report(&table11, &dir.join(ReportSchema::PerfTable11.file_name())))?;
    emit(ReportSchema::EnergyCsv, write_report(&energy, &dir.join(ReportSchema::EnergyCsv.file_name())))?;
    emit(ReportSchema::LedgerTable8, write_report(&table8, &dir.join(ReportSchema::LedgerTable8.file_name())))?;
    let table12 = chain.table12_rows(cas.as_ref());
    emit(ReportSchema::ChainTable12, write_report(&table12, &dir.join(ReportSchema::ChainTable12.file_name())))?;
    Ok(out)
}

/// Registration path under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Upload, pin, register on the ledger, then retrieve through the
    /// ledger and check the fetched bytes against the source file's hash.
    Ledger,
    /// Upload, pin, and append a block binding the CID to the fetched
    /// content's hash.
    Lightchain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseComparison {
    pub ledger_s: Vec<f64>,
    pub lightchain_s: Vec<f64>,
    pub median_ledger_s: f64,
    pub median_lightchain_s: f64,
}

impl PhaseComparison {
    pub fn lightchain_not_slower(&self) -> bool {
        self.median_lightchain_s <= self.median_ledger_s
    }
}

/// End-to-end latency of one file through `phase`, against fresh state in
/// `state_dir`.
pub fn run_phase(phase: Phase, file: &Path, state_dir: &Path) -> Result<f64, PipelineError> {
    let cas = open_cas(BackendKind::Local, &RemoteConfig::default(), &state_dir.join("cas"))?;
    let user = Address::parse(DEFAULT_USER).expect("default user is valid");
    match phase {
        Phase::Ledger => {
            let (mut ledger, _) = Ledger::deploy_journaled(GasSchedule::default(), &state_dir.join("ledger.jsonl"))?;
            let start = Instant::now();
            let (cid, _) = cas.put_file(file).map_err(PipelineError::Cas)?;
            cas.pin(&cid).map_err(PipelineError::Cas)?;
            ledger.store_data(&user, cid.as_str())?;
            let count = ledger.get_data_count(&user);
            let (stored, _) = ledger.retrieve_data(&user, count - 1)?;
            let fetched = cas
                .get(&cas.parse_cid(&stored).map_err(PipelineError::Cas)?)
                .map_err(PipelineError::Cas)?;
            let original = std::fs::read(file).map_err(|e| PipelineError::Cas(crate::cas::CasError::Input(e)))?;
            if sha256_hex(&fetched) != sha256_hex(&original) {
                return Err(PipelineError::Identity("retrieved bytes differ from source".into()));
            }
            Ok(start.elapsed().as_secs_f64())
        }
        Phase::Lightchain => {
            let mut chain = Chain::create(&state_dir.join("chain.jsonl"))?;
            let start = Instant::now();
            let (cid, _) = cas.put_file(file).map_err(PipelineError::Cas)?;
            cas.pin(&cid).map_err(PipelineError::Cas)?;
            chain.save_to_chain(&cid, cas.as_ref())?;
            Ok(start.elapsed().as_secs_f64())
        }
    }
}

/// Paired trials of both phases on the same file, alternating which phase
/// runs first. Each run uses its own fresh state directory under `work_dir`.
pub fn compare_phases(file: &Path, trials: usize, work_dir: &Path) -> Result<PhaseComparison, PipelineError> {
    if trials == 0 {
        return Err(PipelineError::Config("need at least one trial".into()));
    }
    let mut ledger_s = Vec::with_capacity(trials);
    let mut lightchain_s = Vec::with_capacity(trials);
    for trial in 0..trials {
        let order = if trial % 2 == 0 {
            [Phase::Ledger, Phase::Lightchain]
        } else {
            [Phase::Lightchain, Phase::Ledger]
        };
        for phase in order {
            let dir = work_dir.join(format!("trial-{trial}-{phase:?}"));
            let t = run_phase(phase, file, &dir)?;
            let _ = std::fs::remove_dir_all(&dir);
            match phase {
                Phase::Ledger => ledger_s.push(t),
                Phase::Lightchain => lightchain_s.push(t),
            }
        }
    }
    Ok(PhaseComparison {
        median_ledger_s: median(&ledger_s),
        median_lightchain_s: median(&lightchain_s),
        ledger_s,
        lightchain_s,
    })
}
