//! Simulated gas-metered CID registry.
//!
//! Models a minimal storage contract: each user address owns an append-only
//! list of `(cid, commit timestamp, store time)` records. Every mutating call
//! is a transaction that gets the next block number, a SHA-256 transaction
//! hash and a deterministic gas charge, and is written to a newline-delimited
//! JSON journal (fsync per commit) before it becomes visible. Reopening the
//! journal replays it and rebuilds identical state.
//!
//! Gas is affine in the CID's byte length:
//! `gas_used = gas_base + gas_per_byte * len(cid)`, and the reported
//! transaction cost is `gas_used - intrinsic_overhead`. With the default
//! schedule a 46-byte CID costs 752110 gas / 654008 transaction units.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::util::{append_line_durable, is_lower_hex};
use crate::{now_ms, sha256_hex};

const OP_DEPLOY: &str = "deploy";
const OP_STORE: &str = "store_data";

/// Address used as the sender of the deployment transaction.
pub const DEPLOYER: &str = "0x0000000000000000000000000000000000000000";

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("cid must not be empty")]
    EmptyCid,
    #[error("index {index} out of range for {count} records")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid address `{0}` (expected 0x followed by 40 hex digits)")]
    InvalidAddress(String),
    #[error("journal write failed, transaction not committed: {0}")]
    JournalWrite(#[source] std::io::Error),
    #[error("cannot open journal {path}: {source}")]
    JournalOpen {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path} already exists")]
    JournalExists { path: PathBuf },
    #[error("journal corrupt at line {line}: {reason}")]
    JournalCorrupt { line: usize, reason: String },
}

/// Account address: `0x` + 40 hex digits, compared as an opaque string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Address(String);

impl Address {
    pub fn parse(text: &str) -> Result<Address, LedgerError> {
        let ok = text.len() == 42
            && text.starts_with("0x")
            && text[2..].bytes().all(|b| b.is_ascii_hexdigit());
        if ok {
            Ok(Address(text.to_string()))
        } else {
            Err(LedgerError::InvalidAddress(text.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Address {
    type Error = LedgerError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Address::parse(&s)
    }
}

impl From<Address> for String {
    fn from(a: Address) -> String {
        a.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Address {
    type Err = LedgerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Address::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasSchedule {
    pub gas_base: u64,
    pub gas_per_byte: u64,
    pub intrinsic_overhead: u64,
    pub deploy_gas: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            gas_base: 747_510,
            gas_per_byte: 100,
            intrinsic_overhead: 98_102,
            deploy_gas: 1_500_000,
        }
    }
}

impl GasSchedule {
    pub fn store_gas(&self, cid_len: usize) -> u64 {
        self.gas_base + self.gas_per_byte * cid_len as u64
    }

    pub fn tx_cost(&self, gas_used: u64) -> u64 {
        gas_used.saturating_sub(self.intrinsic_overhead)
    }
}

/// Fee for `gas_used` at `gas_price` (any denomination).
pub fn gas_cost(gas_used: u64, gas_price: f64) -> f64 {
    gas_used as f64 * gas_price
}

/// One stored entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub ipfs_hash: String,
    /// Commit time, ms since the Unix epoch.
    pub timestamp: u64,
    /// Submit-to-commit wall clock measured on the client side.
    pub store_time_ms: u64,
    /// Block of the transaction that stored it.
    pub block_number: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxReceipt {
    pub block_number: u64,
    pub tx_hash: String,
    pub gas_used: u64,
    pub tx_cost_units: u64,
    pub user: Address,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum LedgerEvent {
    DataStored {
        user: Address,
        ipfs_hash: String,
        timestamp: u64,
        store_time_ms: u64,
    },
    DataRetrieved {
        user: Address,
        ipfs_hash: String,
        timestamp: u64,
        age_ms: u64,
    },
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub block: u64,
    pub tx_hash: String,
    pub op: String,
    pub user: String,
    pub payload: String,
    pub timestamp_ms: u64,
    pub gas_used: u64,
    pub tx_cost_units: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_time_ms: Option<u64>,
}

/// Transaction hash over the canonical serialization
/// `block \n user \n op \n payload \n timestamp_ms`.
pub fn tx_hash(block: u64, user: &str, op: &str, payload: &str, timestamp_ms: u64) -> String {
    let canonical = format!("{block}\n{user}\n{op}\n{payload}\n{timestamp_ms}");
    format!("0x{}", sha256_hex(canonical.as_bytes()))
}

/// The registry. Mutations take `&mut self`; share it behind a lock to get
/// the single-writer discipline.
#[derive(Debug)]
pub struct Ledger {
    schedule: GasSchedule,
    records: BTreeMap<Address, Vec<DataRecord>>,
    receipts: Vec<TxReceipt>,
    events: Mutex<Vec<LedgerEvent>>,
    journal: Option<File>,
    journal_path: Option<PathBuf>,
    last_timestamp_ms: u64,
}

impl Ledger {
    /// Deploys a fresh in-memory ledger.
    pub fn deploy(schedule: GasSchedule) -> (Ledger, TxReceipt) {
        let mut ledger = Ledger::empty(schedule, None, None);
        let receipt = ledger
            .commit_deploy(now_ms())
            .expect("in-memory deploy cannot fail");
        (ledger, receipt)
    }

    /// Deploys a fresh ledger journaled at `path`, which must not exist yet.
    pub fn deploy_journaled(schedule: GasSchedule, path: &Path) -> Result<(Ledger, TxReceipt), LedgerError> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|source| {
                if source.kind() == std::io::ErrorKind::AlreadyExists {
                    LedgerError::JournalExists { path: path.to_path_buf() }
                } else {
                    LedgerError::JournalOpen { path: path.to_path_buf(), source }
                }
            })?;
        let mut ledger = Ledger::empty(schedule, Some(file), Some(path.to_path_buf()));
        let receipt = ledger.commit_deploy(now_ms())?;
        Ok((ledger, receipt))
    }

    /// Replays the journal at `path`.
    pub fn open(path: &Path) -> Result<Ledger, LedgerError> {
        let open_err = |source| LedgerError::JournalOpen { path: path.to_path_buf(), source };
        let reader = BufReader::new(File::open(path).map_err(open_err)?);
        let mut ledger: Option<Ledger> = None;

        let mut raw = Vec::new();
        let mut reader = reader;
        let mut line_no = 0usize;
        loop {
            raw.clear();
            let n = reader.read_until(b'\n', &mut raw).map_err(open_err)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let corrupt = |reason: String| LedgerError::JournalCorrupt { line: line_no, reason };
            if raw.last() != Some(&b'\n') {
                return Err(corrupt("truncated record (no trailing newline)".into()));
            }
            let text = std::str::from_utf8(&raw[..raw.len() - 1])
                .map_err(|e| corrupt(format!("not UTF-8: {e}")))?;
            let entry: JournalEntry =
                serde_json::from_str(text).map_err(|e| corrupt(format!("bad JSON: {e}")))?;
            match ledger.as_mut() {
                None => ledger = Some(Ledger::replay_deploy(&entry).map_err(corrupt)?),
                Some(l) => l.replay_store(&entry).map_err(corrupt)?,
            }
        }
        let mut ledger = ledger.ok_or(LedgerError::JournalCorrupt {
            line: 0,
            reason: "empty journal".into(),
        })?;
        let file = OpenOptions::new().append(true).open(path).map_err(open_err)?;
        ledger.journal = Some(file);
        ledger.journal_path = Some(path.to_path_buf());
        Ok(ledger)
    }

    /// Opens `path` if it exists, otherwise deploys a new journaled ledger.
    pub fn open_or_deploy(schedule: GasSchedule, path: &Path) -> Result<Ledger, LedgerError> {
        if path.exists() {
            Ledger::open(path)
        } else {
            Ledger::deploy_journaled(schedule, path).map(|(l, _)| l)
        }
    }

    fn empty(schedule: GasSchedule, journal: Option<File>, journal_path: Option<PathBuf>) -> Ledger {
        Ledger {
            schedule,
            records: BTreeMap::new(),
            receipts: Vec::new(),
            events: Mutex::new(Vec::new()),
            journal,
            journal_path,
            last_timestamp_ms: 0,
        }
    }

    pub fn schedule(&self) -> &GasSchedule {
        &self.schedule
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal_path.as_deref()
    }

    /// Every receipt, deployment first.
    pub fn receipts(&self) -> &[TxReceipt] {
        &self.receipts
    }

    pub fn records(&self, user: &Address) -> &[DataRecord] {
        self.records.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn users(&self) -> impl Iterator<Item = &Address> {
        self.records.keys()
    }

    pub fn block_height(&self) -> u64 {
        self.receipts.last().map_or(0, |r| r.block_number)
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }

    fn next_timestamp(&self) -> u64 {
        now_ms().max(self.last_timestamp_ms)
    }

    fn write(&mut self, entry: &JournalEntry) -> Result<(), LedgerError> {
        if let Some(file) = self.journal.as_mut() {
            let line = serde_json::to_string(entry).expect("journal entry serializes");
            append_line_durable(file, &line).map_err(LedgerError::JournalWrite)?;
        }
        Ok(())
    }

    fn deploy_entry(schedule: &GasSchedule, timestamp_ms: u64) -> JournalEntry {
        let payload = serde_json::to_string(schedule).expect("schedule serializes");
        JournalEntry {
            block: 1,
            tx_hash: tx_hash(1, DEPLOYER, OP_DEPLOY, &payload, timestamp_ms),
            op: OP_DEPLOY.into(),
            user: DEPLOYER.into(),
            payload,
            timestamp_ms,
            gas_used: schedule.deploy_gas,
            tx_cost_units: schedule.tx_cost(schedule.deploy_gas),
            store_time_ms: None,
        }
    }

    fn commit_deploy(&mut self, timestamp_ms: u64) -> Result<TxReceipt, LedgerError> {
        let entry = Ledger::deploy_entry(&self.schedule, timestamp_ms);
        self.write(&entry)?;
        Ok(self.apply(&entry))
    }

    fn apply(&mut self, entry: &JournalEntry) -> TxReceipt {
        let user = Address::parse(&entry.user).expect("validated before apply");
        let receipt = TxReceipt {
            block_number: entry.block,
            tx_hash: entry.tx_hash.clone(),
            gas_used: entry.gas_used,
            tx_cost_units: entry.tx_cost_units,
            user: user.clone(),
            timestamp_ms: entry.timestamp_ms,
        };
        self.last_timestamp_ms = entry.timestamp_ms;
        self.receipts.push(receipt.clone());
        if entry.op == OP_STORE {
            let record = DataRecord {
                ipfs_hash: entry.payload.clone(),
                timestamp: entry.timestamp_ms,
                store_time_ms: entry.store_time_ms.unwrap_or(0),
                block_number: entry.block,
            };
            self.events.lock().expect("event log poisoned").push(LedgerEvent::DataStored {
                user: user.clone(),
                ipfs_hash: record.ipfs_hash.clone(),
                timestamp: record.timestamp,
                store_time_ms: record.store_time_ms,
            });
            self.records.entry(user).or_default().push(record);
        }
        receipt
    }

    fn replay_deploy(entry: &JournalEntry) -> Result<Ledger, String> {
        if entry.op != OP_DEPLOY {
            return Err(format!("first transaction is `{}`, expected deploy", entry.op));
        }
        let schedule: GasSchedule = serde_json::from_str(&entry.payload)
            .map_err(|e| format!("bad gas schedule payload: {e}"))?;
        let expected = Ledger::deploy_entry(&schedule, entry.timestamp_ms);
        if &expected != entry {
            return Err("deploy transaction does not match its recomputation".into());
        }
        let mut ledger = Ledger::empty(schedule, None, None);
        ledger.apply(entry);
        Ok(ledger)
    }

    fn replay_store(&mut self, entry: &JournalEntry) -> Result<(), String> {
        let expected_block = self.block_height() + 1;
        if entry.block != expected_block {
            return Err(format!("block {} where {expected_block} expected", entry.block));
        }
        if entry.op != OP_STORE {
            return Err(format!("unexpected op `{}`", entry.op));
        }
        Address::parse(&entry.user).map_err(|e| e.to_string())?;
        if entry.payload.is_empty() {
            return Err("empty cid".into());
        }
        if entry.timestamp_ms < self.last_timestamp_ms {
            return Err("timestamp goes backwards".into());
        }
        let gas = self.schedule.store_gas(entry.payload.len());
        if entry.gas_used != gas || entry.tx_cost_units != self.schedule.tx_cost(gas) {
            return Err("gas accounting does not match the schedule".into());
        }
        let hash = tx_hash(entry.block, &entry.user, &entry.op, &entry.payload, entry.timestamp_ms);
        if !entry.tx_hash.starts_with("0x") || !is_lower_hex(&entry.tx_hash[2..], 64) || entry.tx_hash != hash {
            return Err("transaction hash mismatch".into());
        }
        self.apply(entry);
        Ok(())
    }

    /// Registers `cid` for `user`; the store time is measured from now.
    pub fn store_data(&mut self, user: &Address, cid: &str) -> Result<(TxReceipt, DataRecord), LedgerError> {
        self.store_data_submitted_at(user, cid, Instant::now())
    }

    /// Registers `cid` for `user`; the store time is measured from `submitted`.
    pub fn store_data_submitted_at(
        &mut self,
        user: &Address,
        cid: &str,
        submitted: Instant,
    ) -> Result<(TxReceipt, DataRecord), LedgerError> {
        if cid.is_empty() {
            return Err(LedgerError::EmptyCid);
        }
        let block = self.block_height() + 1;
        let timestamp_ms = self.next_timestamp();
        let gas_used = self.schedule.store_gas(cid.len());
        let entry = JournalEntry {
            block,
            tx_hash: tx_hash(block, user.as_str(), OP_STORE, cid, timestamp_ms),
            op: OP_STORE.into(),
            user: user.to_string(),
            payload: cid.to_string(),
            timestamp_ms,
            gas_used,
            tx_cost_units: self.schedule.tx_cost(gas_used),
            store_time_ms: Some(submitted.elapsed().as_millis() as u64),
        };
        self.write(&entry)?;
        let receipt = self.apply(&entry);
        let record = self.records(user).last().cloned().expect("just appended");
        Ok((receipt, record))
    }

    /// Returns the record's CID and its age in ms. Read-only: no gas, no
    /// journal entry; a `DataRetrieved` event is added to the in-memory log.
    pub fn retrieve_data(&self, user: &Address, index: usize) -> Result<(String, u64), LedgerError> {
        let records = self.records(user);
        let record = records.get(index).ok_or(LedgerError::IndexOutOfRange {
            index,
            count: records.len(),
        })?;
        let now = now_ms();
        let age_ms = now.saturating_sub(record.timestamp);
        self.events.lock().expect("event log poisoned").push(LedgerEvent::DataRetrieved {
            user: user.clone(),
            ipfs_hash: record.ipfs_hash.clone(),
            timestamp: now,
            age_ms,
        });
        Ok((record.ipfs_hash.clone(), age_ms))
    }

    /// Position and record of `user`'s first registration of `cid`.
    pub fn find_record(&self, user: &Address, cid: &str) -> Option<(usize, &DataRecord)> {
        self.records(user).iter().enumerate().find(|(_, r)| r.ipfs_hash == cid)
    }

    pub fn get_data_count(&self, user: &Address) -> usize {
        self.records(user).len()
    }

    /// Receipt of the transaction that committed block `block_number`.
    pub fn receipt(&self, block_number: u64) -> Option<&TxReceipt> {
        block_number
            .checked_sub(1)
            .and_then(|i| self.receipts.get(i as usize))
    }
}
