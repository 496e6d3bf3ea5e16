//! Lightweight hash-linked chain of CID bindings.
//!
//! Each block records a CID together with the SHA-256 of the content that was
//! fetched for it when the block was appended. Blocks are linked by
//! `prev_hash`, and `block_hash` is the SHA-256 of the canonical string
//!
//! ```text
//! index \n timestamp_ms \n cid \n data_hash \n prev_hash
//! ```
//!
//! The chain is persisted as newline-delimited JSON, one block per line,
//! fsynced on every append. There is no consensus and no replication: this
//! is a single-writer, single-node ledger whose value is tamper evidence.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cas::{CasError, Cid, ContentStore};
use crate::metrics::Table12Row;
use crate::util::{append_line_durable, is_lower_hex};
use crate::{now_ms, sha256_hex};

pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("could not fetch {cid}: {source}")]
    FetchFailed {
        cid: String,
        #[source]
        source: CasError,
    },
    #[error("journal write failed, block not appended: {0}")]
    JournalWrite(#[source] std::io::Error),
    #[error("cannot open chain journal {path}: {source}")]
    JournalOpen {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("chain journal {path} already exists")]
    JournalExists { path: PathBuf },
    #[error("chain journal corrupt at line {line}: {reason}")]
    JournalCorrupt { line: usize, reason: String },
    #[error("chain link invalid at block {index}")]
    LinkInvalid { index: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub timestamp_ms: u64,
    /// Empty for genesis.
    pub cid: String,
    /// SHA-256 of the fetched content; all zeros for genesis.
    pub data_hash: String,
    pub prev_hash: String,
    pub block_hash: String,
}

impl Block {
    fn canonical(index: u64, timestamp_ms: u64, cid: &str, data_hash: &str, prev_hash: &str) -> String {
        format!("{index}\n{timestamp_ms}\n{cid}\n{data_hash}\n{prev_hash}")
    }

    fn sealed(index: u64, timestamp_ms: u64, cid: String, data_hash: String, prev_hash: String) -> Block {
        let block_hash = sha256_hex(
            Block::canonical(index, timestamp_ms, &cid, &data_hash, &prev_hash).as_bytes(),
        );
        Block {
            index,
            timestamp_ms,
            cid,
            data_hash,
            prev_hash,
            block_hash,
        }
    }

    /// Recomputes the hash from the block's own fields.
    pub fn compute_hash(&self) -> String {
        sha256_hex(
            Block::canonical(self.index, self.timestamp_ms, &self.cid, &self.data_hash, &self.prev_hash)
                .as_bytes(),
        )
    }

    pub fn is_genesis(&self) -> bool {
        self.index == 0
    }
}

/// The fixed first block.
pub fn genesis() -> Block {
    Block::sealed(0, 0, String::new(), ZERO_HASH.into(), ZERO_HASH.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Verified,
    Tampered,
    Unavailable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Verified => "Verified",
            Verdict::Tampered => "Tampered",
            Verdict::Unavailable => "Unavailable",
        })
    }
}

/// Outcome of re-fetching one block's CID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVerdict {
    pub index: u64,
    pub cid: String,
    pub verdict: Verdict,
    pub stored_hash: String,
    pub fetched_hash: Option<String>,
    pub size_bytes: Option<u64>,
    pub fetch_time_s: f64,
}

/// Result of [`verify_links`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkCheck {
    pub valid: bool,
    pub first_failure: Option<u64>,
}

/// Checks the genesis block, every block hash, every `prev_hash` link,
/// index density and timestamp order. Reports the smallest failing index.
pub fn verify_links(blocks: &[Block]) -> LinkCheck {
    let fail = |i: usize| LinkCheck {
        valid: false,
        first_failure: Some(i as u64),
    };
    let Some(first) = blocks.first() else {
        return fail(0);
    };
    if *first != genesis() {
        return fail(0);
    }
    for (i, pair) in blocks.windows(2).enumerate() {
        let (prev, block) = (&pair[0], &pair[1]);
        let k = i + 1;
        let well_formed = block.index == k as u64
            && is_lower_hex(&block.data_hash, 64)
            && is_lower_hex(&block.prev_hash, 64)
            && is_lower_hex(&block.block_hash, 64);
        if !well_formed
            || block.compute_hash() != block.block_hash
            || block.prev_hash != prev.block_hash
            || block.timestamp_ms < prev.timestamp_ms
        {
            return fail(k);
        }
    }
    LinkCheck {
        valid: true,
        first_failure: None,
    }
}

/// `QmX2mnf7kU...uULNP` style abbreviation for human output.
pub fn abbreviate_cid(cid: &str) -> String {
    let chars: Vec<char> = cid.chars().collect();
    if chars.len() <= 15 {
        return cid.to_string();
    }
    let head: String = chars[..10].iter().collect();
    let tail: String = chars[chars.len() - 5..].iter().collect();
    format!("{head}...{tail}")
}

#[derive(Debug)]
pub struct Chain {
    blocks: Vec<Block>,
    journal: Option<File>,
    journal_path: Option<PathBuf>,
}

impl Chain {
    /// A genesis-only chain that is not persisted.
    pub fn in_memory() -> Chain {
        Chain {
            blocks: vec![genesis()],
            journal: None,
            journal_path: None,
        }
    }

    /// Starts a new chain journal at `path` containing only genesis.
    pub fn create(path: &Path) -> Result<Chain, ChainError> {
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|source| {
                if source.kind() == std::io::ErrorKind::AlreadyExists {
                    ChainError::JournalExists { path: path.to_path_buf() }
                } else {
                    ChainError::JournalOpen { path: path.to_path_buf(), source }
                }
            })?;
        let g = genesis();
        append_line_durable(&mut file, &serde_json::to_string(&g).expect("block serializes"))
            .map_err(ChainError::JournalWrite)?;
        Ok(Chain {
            blocks: vec![g],
            journal: Some(file),
            journal_path: Some(path.to_path_buf()),
        })
    }

    /// Replays the journal at `path` and rejects it unless every link holds.
    pub fn load(path: &Path) -> Result<Chain, ChainError> {
        let open_err = |source| ChainError::JournalOpen { path: path.to_path_buf(), source };
        let mut reader = BufReader::new(File::open(path).map_err(open_err)?);
        let mut blocks = Vec::new();
        let mut raw = Vec::new();
        loop {
            raw.clear();
            if reader.read_until(b'\n', &mut raw).map_err(open_err)? == 0 {
                break;
            }
            let line = blocks.len() + 1;
            let corrupt = |reason: String| ChainError::JournalCorrupt { line, reason };
            if raw.last() != Some(&b'\n') {
                return Err(corrupt("truncated block (no trailing newline)".into()));
            }
            let block: Block = serde_json::from_slice(&raw[..raw.len() - 1])
                .map_err(|e| corrupt(format!("bad JSON: {e}")))?;
            blocks.push(block);
        }
        if blocks.is_empty() {
            return Err(ChainError::JournalCorrupt { line: 0, reason: "empty journal".into() });
        }
        let check = verify_links(&blocks);
        if let Some(index) = check.first_failure {
            return Err(ChainError::LinkInvalid { index });
        }
        let file = OpenOptions::new().append(true).open(path).map_err(open_err)?;
        Ok(Chain {
            blocks,
            journal: Some(file),
            journal_path: Some(path.to_path_buf()),
        })
    }

    pub fn open_or_create(path: &Path) -> Result<Chain, ChainError> {
        if path.exists() {
            Chain::load(path)
        } else {
            Chain::create(path)
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// Always false: a chain holds at least genesis.
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal_path.as_deref()
    }

    pub fn last_block(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    /// Most recent block recording `cid`.
    pub fn find_by_cid(&self, cid: &str) -> Option<&Block> {
        self.blocks.iter().rev().find(|b| !b.is_genesis() && b.cid == cid)
    }

    pub fn verify_links(&self) -> LinkCheck {
        verify_links(&self.blocks)
    }

    /// Fetches `cid`, hashes the content and appends a block binding the
    /// two. Nothing is appended unless the fetch succeeds and the block is
    /// durably journaled.
    pub fn save_to_chain(&mut self, cid: &Cid, cas: &dyn ContentStore) -> Result<Block, ChainError> {
        let data = cas.get(cid).map_err(|source| ChainError::FetchFailed {
            cid: cid.to_string(),
            source,
        })?;
        let data_hash = sha256_hex(&data);
        let prev = self.last_block();
        let block = Block::sealed(
            prev.index + 1,
            now_ms().max(prev.timestamp_ms),
            cid.to_string(),
            data_hash,
            prev.block_hash.clone(),
        );
        if let Some(file) = self.journal.as_mut() {
            let line = serde_json::to_string(&block).expect("block serializes");
            append_line_durable(file, &line).map_err(ChainError::JournalWrite)?;
        }
        self.blocks.push(block.clone());
        Ok(block)
    }

    /// Re-fetches every non-genesis block's CID and compares the content
    /// hash against the stored `data_hash`.
    pub fn verify_chain(&self, cas: &dyn ContentStore) -> Vec<BlockVerdict> {
        self.blocks
            .iter()
            .filter(|b| !b.is_genesis())
            .map(|b| verify_block(b, cas))
            .collect()
    }

    /// Rows in the block-report layout; genesis first with empty columns.
    pub fn table12_rows(&self, cas: &dyn ContentStore) -> Vec<Table12Row> {
        let mut rows = vec![Table12Row {
            block: 0,
            cid: None,
            time_s: None,
            size_b: None,
            stored_hash: None,
            fetched_hash: None,
        }];
        rows.extend(self.verify_chain(cas).into_iter().map(|v| Table12Row {
            block: v.index,
            cid: Some(v.cid),
            time_s: Some(v.fetch_time_s),
            size_b: v.size_bytes,
            stored_hash: Some(v.stored_hash),
            fetched_hash: v.fetched_hash,
        }));
        rows
    }
}

fn verify_block(block: &Block, cas: &dyn ContentStore) -> BlockVerdict {
    let start = Instant::now();
    let fetched = cas
        .parse_cid(&block.cid)
        .and_then(|cid| cas.fetch_raw(&cid));
    let fetch_time_s = start.elapsed().as_secs_f64();
    let (verdict, fetched_hash, size_bytes) = match fetched {
        Ok(data) => {
            let h = sha256_hex(&data);
            let verdict = if h == block.data_hash {
                Verdict::Verified
            } else {
                Verdict::Tampered
            };
            (verdict, Some(h), Some(data.len() as u64))
        }
        Err(e) => {
            log::warn!("block {}: {e}", block.index);
            (Verdict::Unavailable, None, None)
        }
    };
    BlockVerdict {
        index: block.index,
        cid: block.cid.clone(),
        verdict,
        stored_hash: block.data_hash.clone(),
        fetched_hash,
        size_bytes,
        fetch_time_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cas::LocalStore;

    // SHA-256 of "0\n0\n\n" + 64 zeros + "\n" + 64 zeros, computed with Python hashlib.
    const GENESIS_HASH: &str = "ee71c230f841f72f041126787d092cce1eab67e07d472e20dca07cd706f3120e";

    fn setup() -> (tempfile::TempDir, LocalStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = LocalStore::open(dir.path().join("cas")).unwrap();
        (dir, store)
    }

    fn chain_of(store: &LocalStore, contents: &[&[u8]]) -> (Chain, Vec<Cid>) {
        let mut chain = Chain::in_memory();
        let mut cids = Vec::new();
        for c in contents {
            let (cid, _) = store.put(c).unwrap();
            chain.save_to_chain(&cid, store).unwrap();
            cids.push(cid);
        }
        (chain, cids)
    }

    #[test]
    fn genesis_is_fixed() {
        let g = genesis();
        assert_eq!(g.index, 0);
        assert_eq!(g.timestamp_ms, 0);
        assert_eq!(g.cid, "");
        assert_eq!(g.data_hash, ZERO_HASH);
        assert_eq!(g.prev_hash, ZERO_HASH);
        assert_eq!(g.block_hash, GENESIS_HASH);
        assert_eq!(genesis(), g);
    }

    #[test]
    fn save_binds_content_hash_and_links() {
        let (_d, store) = setup();
        let (chain, _) = chain_of(&store, &[b"one", b"two", b"three", b"four"]);
        assert_eq!(chain.len(), 5);
        assert_eq!(chain.blocks()[1].data_hash, sha256_hex(b"one"));
        for k in 1..5 {
            assert_eq!(chain.blocks()[k].prev_hash, chain.blocks()[k - 1].block_hash);
            assert_eq!(chain.blocks()[k].index, k as u64);
        }
        assert!(chain.verify_links().valid);
    }

    #[test]
    fn unresolvable_cid_appends_nothing() {
        let (_d, store) = setup();
        let mut chain = Chain::in_memory();
        let missing = Cid::for_content(b"nowhere");
        assert!(matches!(chain.save_to_chain(&missing, &store), Err(ChainError::FetchFailed { .. })));
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn verdicts_distinguish_tampered_and_missing() {
        let (_d, store) = setup();
        let (chain, cids) = chain_of(&store, &[b"one", b"two", b"three", b"four"]);
        let all: Vec<_> = chain.verify_chain(&store).iter().map(|v| v.verdict).collect();
        assert_eq!(all, [Verdict::Verified; 4]);

        let path = store.object_path(&cids[1]);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0x80;
        std::fs::write(&path, bytes).unwrap();
        std::fs::remove_file(store.object_path(&cids[2])).unwrap();

        let verdicts: Vec<_> = chain.verify_chain(&store).iter().map(|v| v.verdict).collect();
        assert_eq!(
            verdicts,
            [Verdict::Verified, Verdict::Tampered, Verdict::Unavailable, Verdict::Verified]
        );
    }

    #[test]
    fn last_block_of_fresh_chain_is_genesis() {
        assert_eq!(*Chain::in_memory().last_block(), genesis());
    }

    #[test]
    fn journal_roundtrip() {
        let (d, store) = setup();
        let path = d.path().join("chain.jsonl");
        let mut chain = Chain::create(&path).unwrap();
        for c in [&b"a"[..], b"b", b"c"] {
            let (cid, _) = store.put(c).unwrap();
            chain.save_to_chain(&cid, &store).unwrap();
        }
        let loaded = Chain::load(&path).unwrap();
        assert_eq!(loaded.blocks(), chain.blocks());
        assert!(loaded.verify_links().valid);
    }

    #[test]
    fn edited_journal_is_rejected_at_that_block() {
        let (d, store) = setup();
        let path = d.path().join("chain.jsonl");
        let mut chain = Chain::create(&path).unwrap();
        for c in [&b"a"[..], b"b", b"c"] {
            let (cid, _) = store.put(c).unwrap();
            chain.save_to_chain(&cid, &store).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let target = &chain.blocks()[2].data_hash;
        let edited = text.replace(target.as_str(), &sha256_hex(b"forged"));
        std::fs::write(&path, edited).unwrap();
        assert!(matches!(Chain::load(&path), Err(ChainError::LinkInvalid { index: 2 })));
    }

    #[test]
    fn truncated_journal_fails_to_load() {
        let (d, store) = setup();
        let path = d.path().join("chain.jsonl");
        let mut chain = Chain::create(&path).unwrap();
        let (cid, _) = store.put(b"a").unwrap();
        chain.save_to_chain(&cid, &store).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        assert!(matches!(Chain::load(&path), Err(ChainError::JournalCorrupt { line: 2, .. })));
    }

    #[test]
    fn abbreviation() {
        assert_eq!(
            abbreviate_cid("QmX2mnf7kUabcdefghijklmnopqrstuvwxyz0123uULNP"),
            "QmX2mnf7kU...uULNP"
        );
        assert_eq!(abbreviate_cid("short"), "short");
    }

    #[test]
    fn table12_rows_start_with_genesis() {
        let (_d, store) = setup();
        let (chain, _) = chain_of(&store, &[&[1u8; 152][..], &[2u8; 87][..]]);
        let rows = chain.table12_rows(&store);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].cid, None);
        assert_eq!(rows[1].size_b, Some(152));
        assert_eq!(rows[2].size_b, Some(87));
        assert_eq!(rows[1].stored_hash, rows[1].fetched_hash);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn build(n: usize) -> Vec<Block> {
            let mut blocks = vec![genesis()];
            for i in 0..n {
                let prev = blocks.last().unwrap();
                blocks.push(Block::sealed(
                    prev.index + 1,
                    1_700_000_000_000 + i as u64,
                    Cid::for_content(&[i as u8]).to_string(),
                    sha256_hex(&[i as u8]),
                    prev.block_hash.clone(),
                ));
            }
            blocks
        }

        proptest! {
            #[test]
            fn any_field_mutation_breaks_links_at_or_before(n in 1usize..10, k_seed in any::<usize>(),
                                                           field in 0usize..6, salt in 1u64..1000) {
                let mut blocks = build(n);
                let k = k_seed % (n + 1);
                let b = &mut blocks[k];
                match field {
                    0 => b.index += salt,
                    1 => b.timestamp_ms += salt,
                    2 => b.cid.push('x'),
                    3 => b.data_hash = sha256_hex(&salt.to_le_bytes()),
                    4 => b.prev_hash = sha256_hex(&salt.to_be_bytes()),
                    _ => b.block_hash = sha256_hex(b"other"),
                }
                let check = verify_links(&blocks);
                prop_assert!(!check.valid);
                prop_assert!(check.first_failure.unwrap() <= k as u64);
            }

            #[test]
            fn untouched_chains_validate(n in 0usize..20) {
                prop_assert!(verify_links(&build(n)).valid);
            }
        }
    }
}
