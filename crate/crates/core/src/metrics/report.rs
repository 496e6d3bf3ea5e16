use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// The fixed CSV layouts this crate emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSchema {
    UploadTable7,
    PerfTable11,
    ChainTable12,
    EnergyCsv,
    LedgerTable8,
}

impl ReportSchema {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            ReportSchema::UploadTable7 => &[
                "File Size (MB)",
                "Uploading Time (s)",
                "Power Consumption (J)",
                "Memory (MB)",
            ],
            ReportSchema::PerfTable11 => &[
                "Operation",
                "Time (s)",
                "Memory (MB)",
                "Bandwidth (KB/s)",
                "Size (MB)",
                "CID",
            ],
            ReportSchema::ChainTable12 => &[
                "Block",
                "CID",
                "Time (s)",
                "Size (B)",
                "Stored Hash",
                "Fetched Hash",
            ],
            ReportSchema::EnergyCsv => &[
                "File",
                "File Size (MB)",
                "Start Time",
                "End Time",
                "Duration (s)",
                "Initial CPU (%)",
                "Final CPU (%)",
                "Average CPU (%)",
                "Energy (J)",
                "CID",
            ],
            ReportSchema::LedgerTable8 => &[
                "Block Number",
                "Transaction Hash",
                "Gas Cost Units",
                "Transaction Cost Units",
                "Retrieval Time (ms)",
                "IPFS Hash",
            ],
        }
    }

    /// Default file name used by `bench` and the pipeline.
    pub fn file_name(self) -> &'static str {
        match self {
            ReportSchema::UploadTable7 => "table7_upload.csv",
            ReportSchema::PerfTable11 => "table11_perf.csv",
            ReportSchema::ChainTable12 => "table12_chain.csv",
            ReportSchema::EnergyCsv => "energy.csv",
            ReportSchema::LedgerTable8 => "table8_ledger.csv",
        }
    }
}

/// A row type bound to one [`ReportSchema`]. Field order must follow the
/// schema header.
pub trait ReportRow: Serialize + DeserializeOwned {
    const SCHEMA: ReportSchema;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table7Row {
    pub file_size_mb: f64,
    pub uploading_time_s: f64,
    pub power_consumption_j: Option<f64>,
    pub memory_mb: Option<f64>,
}

impl ReportRow for Table7Row {
    const SCHEMA: ReportSchema = ReportSchema::UploadTable7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operation {
    Upload,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table11Row {
    pub operation: Operation,
    pub time_s: f64,
    pub memory_mb: Option<f64>,
    pub bandwidth_kb_s: f64,
    pub size_mb: f64,
    pub cid: String,
}

impl ReportRow for Table11Row {
    const SCHEMA: ReportSchema = ReportSchema::PerfTable11;
}

/// Genesis is written with every column but `Block` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table12Row {
    pub block: u64,
    pub cid: Option<String>,
    pub time_s: Option<f64>,
    pub size_b: Option<u64>,
    pub stored_hash: Option<String>,
    pub fetched_hash: Option<String>,
}

impl ReportRow for Table12Row {
    const SCHEMA: ReportSchema = ReportSchema::ChainTable12;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub file: String,
    pub file_size_mb: f64,
    /// RFC 3339, millisecond precision.
    pub start_time: String,
    pub end_time: String,
    pub duration_s: f64,
    pub initial_cpu_pct: Option<f64>,
    pub final_cpu_pct: Option<f64>,
    pub average_cpu_pct: Option<f64>,
    pub energy_j: Option<f64>,
    pub cid: String,
}

impl ReportRow for EnergyRow {
    const SCHEMA: ReportSchema = ReportSchema::EnergyCsv;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table8Row {
    pub block_number: u64,
    pub transaction_hash: String,
    pub gas_cost_units: u64,
    pub transaction_cost_units: u64,
    pub retrieval_time_ms: Option<f64>,
    pub ipfs_hash: String,
}

impl ReportRow for Table8Row {
    const SCHEMA: ReportSchema = ReportSchema::LedgerTable8;
}

fn writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(w)
}

/// Writes `rows` under the schema header and returns the number of data rows.
pub fn write_report<R: ReportRow>(rows: &[R], out_path: &Path) -> Result<usize, csv::Error> {
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = writer(BufWriter::new(File::create(out_path)?));
    w.write_record(R::SCHEMA.header())?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows.len())
}

/// Reads a report written by [`write_report`], checking the header first.
pub fn read_report<R: ReportRow>(path: &Path) -> Result<Vec<R>, csv::Error> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != R::SCHEMA.header() {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected header {header:?} for {:?}", R::SCHEMA),
        )));
    }
    r.records().map(|rec| rec?.deserialize(None)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_rows_write_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t7.csv");
        let n = write_report::<Table7Row>(&[], &path).unwrap();
        assert_eq!(n, 0);
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "File Size (MB),Uploading Time (s),Power Consumption (J),Memory (MB)\n"
        );
    }

    #[test]
    fn golden_headers() {
        let dir = tempfile::tempdir().unwrap();
        let cases: [(ReportSchema, &str); 5] = [
            (ReportSchema::UploadTable7, "File Size (MB),Uploading Time (s),Power Consumption (J),Memory (MB)\n"),
            (ReportSchema::PerfTable11, "Operation,Time (s),Memory (MB),Bandwidth (KB/s),Size (MB),CID\n"),
            (ReportSchema::ChainTable12, "Block,CID,Time (s),Size (B),Stored Hash,Fetched Hash\n"),
            (ReportSchema::EnergyCsv, "File,File Size (MB),Start Time,End Time,Duration (s),Initial CPU (%),Final CPU (%),Average CPU (%),Energy (J),CID\n"),
            (ReportSchema::LedgerTable8, "Block Number,Transaction Hash,Gas Cost Units,Transaction Cost Units,Retrieval Time (ms),IPFS Hash\n"),
        ];
        for (schema, expected) in cases {
            let path = dir.path().join(schema.file_name());
            match schema {
                ReportSchema::UploadTable7 => write_report::<Table7Row>(&[], &path),
                ReportSchema::PerfTable11 => write_report::<Table11Row>(&[], &path),
                ReportSchema::ChainTable12 => write_report::<Table12Row>(&[], &path),
                ReportSchema::EnergyCsv => write_report::<EnergyRow>(&[], &path),
                ReportSchema::LedgerTable8 => write_report::<Table8Row>(&[], &path),
            }
            .unwrap();
            assert_eq!(std::fs::read_to_string(&path).unwrap(), expected);
        }
    }

    #[test]
    fn table12_genesis_and_block_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t12.csv");
        let rows = vec![
            Table12Row { block: 0, cid: None, time_s: None, size_b: None, stored_hash: None, fetched_hash: None },
            Table12Row {
                block: 1,
                cid: Some("QmaozNR7DZHQK1ZcU9p7QdrshMvXqWK6gpu5rmrkPdT3L4".into()),
                time_s: Some(0.5),
                size_b: Some(11),
                stored_hash: Some("ab".into()),
                fetched_hash: Some("ab".into()),
            },
        ];
        write_report(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "Block,CID,Time (s),Size (B),Stored Hash,Fetched Hash\n0,,,,,\n1,QmaozNR7DZHQK1ZcU9p7QdrshMvXqWK6gpu5rmrkPdT3L4,0.5,11,ab,ab\n"
        );
        assert_eq!(read_report::<Table12Row>(&path).unwrap(), rows);
    }

    #[test]
    fn fields_with_commas_are_quoted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("energy.csv");
        let row = EnergyRow {
            file: "dummy, file 5MB.dat".into(),
            file_size_mb: 5.0,
            start_time: "2025-01-01T00:00:00.000Z".into(),
            end_time: "2025-01-01T00:00:01.000Z".into(),
            duration_s: 1.0,
            initial_cpu_pct: Some(20.0),
            final_cpu_pct: Some(40.0),
            average_cpu_pct: Some(30.0),
            energy_j: Some(4.5),
            cid: "Qm".into(),
        };
        write_report(std::slice::from_ref(&row), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("\"dummy, file 5MB.dat\",5.0,"));
        assert_eq!(read_report::<EnergyRow>(&path).unwrap(), vec![row]);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_report::<Table7Row>(&[], &path).unwrap();
        assert!(read_report::<Table8Row>(&path).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn table11_roundtrip(rows in proptest::collection::vec(
                (any::<bool>(), 0.0f64..1e6, proptest::option::of(0.0f64..1e4), 0.0f64..1e9, 0.0f64..1e4, "[1-9A-Za-z]{0,46}"),
                0..20,
            )) {
                let rows: Vec<Table11Row> = rows.into_iter().map(|(up, t, m, bw, sz, cid)| Table11Row {
                    operation: if up { Operation::Upload } else { Operation::Retrieval },
                    time_s: t, memory_mb: m, bandwidth_kb_s: bw, size_mb: sz, cid,
                }).collect();
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("t11.csv");
                prop_assert_eq!(write_report(&rows, &path).unwrap(), rows.len());
                prop_assert_eq!(read_report::<Table11Row>(&path).unwrap(), rows);
            }
        }
    }
}
