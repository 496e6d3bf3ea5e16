//! Decentralized file storage pipeline.
//!
//! Files dropped into a watched directory are uploaded to a content-addressed
//! store ([`cas`]), and their content identifiers are registered either on a
//! simulated gas-metered registry ([`ledger`]) or on a lightweight hash-linked
//! chain ([`lightchain`]) whose verification pass re-fetches every CID and
//! detects tampering. [`metrics`] times and prices every step and writes CSV
//! reports; [`pipeline`] wires the stages together and drives the CLI.

pub mod cas;
pub mod ledger;
pub mod lightchain;
pub mod metrics;
pub mod pipeline;
pub mod watcher;

mod util;

pub use cas::{BackendKind, Cid, ContentStat, ContentStore};
pub use util::{now_ms, sha256_hex};
