use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cidledger::cas::BackendKind;
use cidledger::ledger::{Address, Ledger, LedgerEvent};
use cidledger::lightchain::{abbreviate_cid, Verdict};
use cidledger::metrics::{write_report, ProcfsProbe, Table8Row};
use cidledger::pipeline::{
    self, BenchConfig, FillMode, GeneratorConfig, PipelineConfig, RetrievalVerdict, Stores, Target,
};
use cidledger::watcher::StopSignal;

#[derive(Parser, Debug)]
#[command(name = "cidledger", version, about = "Content-addressed upload pipeline with CID registration")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// TOML config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    state_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    #[arg(long, global = true)]
    api_addr: Option<String>,
    #[arg(long, global = true)]
    gateway_addr: Option<String>,
    /// Account address (0x + 40 hex digits).
    #[arg(long, global = true)]
    user: Option<String>,
    #[arg(long, global = true)]
    tdp: Option<f64>,
    /// Registration target; repeat for both.
    #[arg(long, global = true, value_enum)]
    register: Vec<RegisterTarget>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Backend {
    Local,
    Remote,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegisterTarget {
    Ledger,
    Lightchain,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fill {
    Zeros,
    Random,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the dummy file ladder.
    Gen {
        #[arg(default_value_t = 5)]
        start_mb: u64,
        #[arg(default_value_t = 5)]
        gap_mb: u64,
        #[arg(default_value_t = 550)]
        max_mb: u64,
        #[arg(long, default_value = "generated files")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "zeros")]
        fill: Fill,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Watch a directory and process new files.
    Watch {
        /// Directory to watch (overrides the config file).
        dir: Option<PathBuf>,
        #[arg(long)]
        interval: Option<f64>,
        /// Stop after this many seconds.
        #[arg(long, conflicts_with = "forever")]
        stop_after: Option<f64>,
        /// Run until killed.
        #[arg(long)]
        forever: bool,
    },
    /// Upload and register the given files.
    Upload {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Fetch the user's index-th registered file.
    Retrieve {
        index: usize,
        /// Write the bytes here instead of discarding them.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Chain(ChainCmd),
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Run the desk-scale benchmark and write all report CSVs.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 4, 16, 64])]
        sizes: Vec<u64>,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, value_enum, default_value = "random")]
        fill: Fill,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also time the ledger and lightchain paths on this many paired trials.
        #[arg(long, default_value_t = 0)]
        phase_trials: usize,
    },
}

#[derive(Subcommand, Debug)]
enum ChainCmd {
    /// Re-fetch every block's CID and compare content hashes.
    Verify,
    /// List blocks.
    Show {
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum LedgerCmd {
    /// List transactions.
    Show {
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn fill_mode(fill: Fill, seed: u64) -> FillMode {
    match fill {
        Fill::Zeros => FillMode::Zeros,
        Fill::Random => FillMode::Random { seed },
    }
}

fn load_config(g: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = &g.state_dir {
        cfg.state_dir = v.clone();
    }
    if let Some(v) = &g.report_dir {
        cfg.report_dir = v.clone();
    }
    if let Some(v) = g.backend {
        cfg.backend = match v {
            Backend::Local => BackendKind::Local,
            Backend::Remote => BackendKind::Remote,
        };
    }
    if let Some(v) = &g.api_addr {
        cfg.remote.api_addr = v.clone();
    }
    if let Some(v) = &g.gateway_addr {
        cfg.remote.gateway_addr = v.clone();
    }
    if let Some(v) = &g.user {
        cfg.user_address = v.clone();
    }
    if let Some(v) = g.tdp {
        cfg.tdp_watts = v;
    }
    if !g.register.is_empty() {
        cfg.register_on = g
            .register
            .iter()
            .map(|t| match t {
                RegisterTarget::Ledger => Target::Ledger,
                RegisterTarget::Lightchain => Target::Lightchain,
            })
            .collect();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let invocation: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Gen { start_mb, gap_mb, max_mb, out, fill, seed } => {
            let files = pipeline::gen_files(&GeneratorConfig {
                start_mb,
                gap_mb,
                max_mb,
                out_dir: out,
                fill: fill_mode(fill, seed),
            })?;
            for f in &files {
                println!("{}\t{}", f.size_mb, f.path.display());
            }
            Ok(0)
        }
        Command::Watch { dir, interval, stop_after, forever } => {
            let mut cfg = load_config(&cli.global)?;
            if let Some(d) = dir {
                cfg.watch.root_dir = d;
            }
            if let Some(i) = interval {
                cfg.watch.scan_interval_s = i;
            }
            if forever {
                cfg.watch.stop_after_s = None;
            } else if let Some(s) = stop_after {
                cfg.watch.stop_after_s = Some(s);
            }
            let report = pipeline::run_pipeline(&cfg, invocation, &StopSignal::new())?;
            println!(
                "processed {} file(s), {} failure(s), {} scan(s)",
                report.files.len(),
                report.failures,
                report.watch.scans
            );
            for f in &report.files {
                print_outcome(f);
            }
            if let Some(fatal) = &report.fatal {
                eprintln!("error: {fatal}");
            }
            Ok(report.exit_code() as u8)
        }
        Command::Upload { files } => {
            let cfg = load_config(&cli.global)?;
            let outcomes = pipeline::upload_files(&cfg, &files, &ProcfsProbe::new())?;
            outcomes.iter().for_each(print_outcome);
            Ok(if outcomes.iter().all(|o| o.succeeded()) { 0 } else { 1 })
        }
        Command::Retrieve { index, out } => {
            let cfg = load_config(&cli.global)?;
            let user = Address::parse(&cfg.user_address)?;
            let stores = Stores::open(&cfg, &BTreeSet::new())?;
            let r = pipeline::retrieve_by_index(&stores, &user, index)?;
            println!(
                "{}\t{:?}\tlookup {:.6} s\tfetch {:.6} s\tage {} ms",
                r.cid, r.verdict, r.lookup_s, r.fetch_s, r.age_ms
            );
            if let (Some(path), Some(bytes)) = (out, &r.bytes) {
                std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(match r.verdict {
                RetrievalVerdict::Verified | RetrievalVerdict::Unchecked => 0,
                RetrievalVerdict::Tampered | RetrievalVerdict::Unavailable => 1,
            })
        }
        Command::Chain(cmd) => {
            let cfg = load_config(&cli.global)?;
            if !cfg.chain_path().exists() {
                bail!("no chain journal at {}", cfg.chain_path().display());
            }
            let stores = Stores::open(&cfg, &BTreeSet::new())?;
            let chain = stores.chain.as_ref().expect("journal exists").lock().expect("chain lock");
            match cmd {
                ChainCmd::Verify => {
                    let links = chain.verify_links();
                    let verdicts = chain.verify_chain(stores.cas.as_ref());
                    for v in &verdicts {
                        println!("{}\t{}\t{}", v.index, abbreviate_cid(&v.cid), v.verdict);
                    }
                    if let Some(k) = links.first_failure {
                        println!("link check failed at block {k}");
                    }
                    let all_ok = links.valid && verdicts.iter().all(|v| v.verdict == Verdict::Verified);
                    println!("{}", if all_ok { "chain verified" } else { "chain NOT verified" });
                    Ok(if all_ok { 0 } else { 1 })
                }
                ChainCmd::Show { csv } => {
                    let mut stdout = std::io::stdout().lock();
                    for b in chain.blocks() {
                        writeln!(
                            stdout,
                            "{}\t{}\t{}\t{}",
                            b.index,
                            b.timestamp_ms,
                            if b.cid.is_empty() { "-".to_string() } else { abbreviate_cid(&b.cid) },
                            &b.block_hash[..16]
                        )?;
                    }
                    if let Some(path) = csv {
                        write_report(&chain.table12_rows(stores.cas.as_ref()), &path)?;
                    }
                    Ok(0)
                }
            }
        }
        Command::Ledger(LedgerCmd::Show { csv }) => {
            let cfg = load_config(&cli.global)?;
            if !cfg.ledger_path().exists() {
                bail!("no ledger journal at {}", cfg.ledger_path().display());
            }
            let ledger = Ledger::open(&cfg.ledger_path())?;
            let mut rows = Vec::new();
            for r in ledger.receipts() {
                println!("{}\t{}\t{}\t{}\t{}", r.block_number, r.tx_hash, r.gas_used, r.tx_cost_units, r.user);
                rows.push(r);
            }
            if let Some(path) = csv {
                let stored = ledger.events().into_iter().filter_map(|e| match e {
                    LedgerEvent::DataStored { ipfs_hash, .. } => Some(ipfs_hash),
                    LedgerEvent::DataRetrieved { .. } => None,
                });
                let table: Vec<Table8Row> = rows
                    .iter()
                    .skip(1)
                    .zip(stored)
                    .map(|(r, cid)| Table8Row {
                        block_number: r.block_number,
                        transaction_hash: r.tx_hash.clone(),
                        gas_cost_units: r.gas_used,
                        transaction_cost_units: r.tx_cost_units,
                        retrieval_time_ms: None,
                        ipfs_hash: cid,
                    })
                    .collect();
                write_report(&table, &path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Bench { sizes, out, runs, fill, seed, phase_trials } => {
            let cfg = load_config(&cli.global)?;
            let bench_cfg = BenchConfig {
                sizes_mb: sizes,
                backend: cfg.backend,
                remote: cfg.remote.clone(),
                out_dir: out.clone(),
                fill: fill_mode(fill, seed),
                tdp_watts: cfg.tdp_watts,
                runs,
            };
            let result = pipeline::bench(&bench_cfg)?;
            for p in &result.csvs {
                println!("wrote {}", p.display());
            }
            for f in &result.failures {
                eprintln!("failure: {f}");
            }
            if phase_trials > 0 {
                let file = out.join("bench-files").join(pipeline::file_name_for(bench_cfg.sizes_mb[0]));
                let cmp = pipeline::compare_phases(&file, phase_trials, &out.join("phase-work"))?;
                println!(
                    "median end-to-end latency: ledger {:.6} s, lightchain {:.6} s",
                    cmp.median_ledger_s, cmp.median_lightchain_s
                );
            }
            Ok(if result.failures.is_empty() { 0 } else { 1 })
        }
    }
}

fn print_outcome(f: &pipeline::FileOutcome) {
    match (&f.failure, &f.cid) {
        (None, Some(cid)) => println!(
            "ok\t{}\t{}\tblock {}\tchain {}",
            f.path.display(),
            cid,
            f.receipt.as_ref().map(|r| r.block_number.to_string()).unwrap_or_else(|| "-".into()),
            f.block.as_ref().map(|b| b.index.to_string()).unwrap_or_else(|| "-".into()),
        ),
        (Some(fail), _) => println!("failed\t{}\t{:?}: {}", f.path.display(), fail.stage, fail.error),
        (None, None) => println!("skipped\t{}", f.path.display()),
    }
    if let Some(d) = &f.discrepancy {
        println!("discrepancy\t{}\t{d}", f.path.display());
    }
}
