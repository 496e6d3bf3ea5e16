use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Milliseconds since the Unix epoch (UTC).
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Appends one line to a journal file and fsyncs it. The line is written
/// with a single `write_all`; if the write or sync fails the file is cut back
/// to its previous length so no partial record is left behind. A crash mid
/// write can still leave a torn tail, which replay rejects.
pub(crate) fn append_line_durable(file: &mut std::fs::File, line: &str) -> std::io::Result<()> {
    use std::io::Write;
    let prev_len = file.metadata()?.len();
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    let result = file.write_all(&buf).and_then(|_| file.sync_data());
    if result.is_err() {
        let _ = file.set_len(prev_len);
    }
    result
}

pub(crate) fn is_lower_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}
