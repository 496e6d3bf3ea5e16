//! Timing, resource and energy accounting, and CSV reporting.
//!
//! Energy uses a TDP model: power is the average of two instantaneous CPU
//! readings (before and after the operation) scaled against the processor's
//! thermal design power, and energy is that power times the measured
//! duration. Bandwidth is file size in KiB over elapsed seconds.

mod probe;
mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cas::{CasError, Cid, ContentStore};

pub use probe::{Clock, FakeClock, FakeProbe, MonotonicClock, ProbeError, ProcfsProbe, ResourceProbe};
pub use report::{
    read_report, write_report, EnergyRow, Operation, ReportRow, ReportSchema, Table11Row, Table12Row,
    Table7Row, Table8Row,
};

/// Default thermal design power, in watts (Raspberry Pi 4-class SoC).
pub const DEFAULT_TDP_WATTS: f64 = 15.0;

pub const BYTES_PER_KB: f64 = 1024.0;
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("cpu utilisation {0} outside 0..=100")]
    CpuOutOfRange(f64),
    #[error("tdp must be positive, got {0}")]
    InvalidTdp(f64),
    #[error("elapsed time must be positive, got {0}")]
    NonPositiveElapsed(f64),
}

/// Per-upload measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadMetrics {
    pub size_bytes: u64,
    pub upload_time_s: f64,
    pub retrieval_time_s: Option<f64>,
    /// RSS after minus RSS before, clamped at zero. `None` when the
    /// resource probe failed.
    pub memory_used_mb: Option<f64>,
    pub bandwidth_kb_s: f64,
    /// Set when a zero-length object was stored.
    pub empty_content: bool,
}

impl UploadMetrics {
    /// Metrics for an upload of `size_bytes` that took `upload_time_s`.
    pub fn from_upload(size_bytes: u64, upload_time_s: f64) -> UploadMetrics {
        let upload_time_s = upload_time_s.max(0.0);
        UploadMetrics {
            size_bytes,
            upload_time_s,
            retrieval_time_s: None,
            memory_used_mb: Some(0.0),
            bandwidth_kb_s: bandwidth(size_bytes, upload_time_s).unwrap_or(0.0),
            empty_content: size_bytes == 0,
        }
    }

    pub fn size_kb(&self) -> f64 {
        self.size_bytes as f64 / BYTES_PER_KB
    }

    pub fn size_mb(&self) -> f64 {
        self.size_bytes as f64 / BYTES_PER_MB
    }
}

/// One CPU-energy measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub initial_cpu_pct: f64,
    pub final_cpu_pct: f64,
    pub avg_cpu_pct: f64,
    pub duration_s: f64,
    pub tdp_watts: f64,
    pub energy_j: f64,
}

impl EnergySample {
    pub fn new(
        initial_cpu_pct: f64,
        final_cpu_pct: f64,
        duration_s: f64,
        tdp_watts: f64,
    ) -> Result<EnergySample, MetricsError> {
        let avg_cpu_pct = (initial_cpu_pct + final_cpu_pct) / 2.0;
        check_cpu(initial_cpu_pct)?;
        check_cpu(final_cpu_pct)?;
        let energy_j = calculate_power(avg_cpu_pct, tdp_watts)? * duration_s.max(0.0);
        Ok(EnergySample {
            initial_cpu_pct,
            final_cpu_pct,
            avg_cpu_pct,
            duration_s: duration_s.max(0.0),
            tdp_watts,
            energy_j,
        })
    }
}

fn check_cpu(cpu_pct: f64) -> Result<(), MetricsError> {
    if (0.0..=100.0).contains(&cpu_pct) {
        Ok(())
    } else {
        Err(MetricsError::CpuOutOfRange(cpu_pct))
    }
}

/// Power draw in watts at `cpu_pct` utilisation.
pub fn calculate_power(cpu_pct: f64, tdp_watts: f64) -> Result<f64, MetricsError> {
    check_cpu(cpu_pct)?;
    if tdp_watts.is_nan() || tdp_watts <= 0.0 {
        return Err(MetricsError::InvalidTdp(tdp_watts));
    }
    Ok((cpu_pct / 100.0) * tdp_watts)
}

/// Throughput in KiB/s.
pub fn bandwidth(size_bytes: u64, elapsed_s: f64) -> Result<f64, MetricsError> {
    if elapsed_s.is_nan() || elapsed_s <= 0.0 {
        return Err(MetricsError::NonPositiveElapsed(elapsed_s));
    }
    Ok((size_bytes as f64 / BYTES_PER_KB) / elapsed_s)
}

/// Checks `bandwidth × time = size` to within `rel_tol`.
pub fn bandwidth_identity_holds(size_bytes: u64, upload_time_s: f64, bandwidth_kb_s: f64, rel_tol: f64) -> bool {
    let size_kb = size_bytes as f64 / BYTES_PER_KB;
    if upload_time_s <= 0.0 {
        return bandwidth_kb_s == 0.0;
    }
    let product = bandwidth_kb_s * upload_time_s;
    if size_kb == 0.0 {
        return product == 0.0;
    }
    ((product - size_kb) / size_kb).abs() <= rel_tol
}

/// Result of [`measure_upload`].
#[derive(Debug, Clone)]
pub struct MeasuredUpload {
    pub cid: Cid,
    pub metrics: UploadMetrics,
    /// `None` when the probe failed; the upload itself still succeeded.
    pub energy: Option<EnergySample>,
}

/// Uploads `file`, sampling CPU and RSS immediately before and after.
pub fn measure_upload(
    file: &Path,
    cas: &dyn ContentStore,
    probe: &dyn ResourceProbe,
    tdp_watts: f64,
) -> Result<MeasuredUpload, CasError> {
    measure_upload_with_clock(file, cas, probe, &MonotonicClock::new(), tdp_watts)
}

/// [`measure_upload`] with the energy window timed by `clock`.
pub fn measure_upload_with_clock(
    file: &Path,
    cas: &dyn ContentStore,
    probe: &dyn ResourceProbe,
    clock: &dyn Clock,
    tdp_watts: f64,
) -> Result<MeasuredUpload, CasError> {
    let start = clock.now_s();
    let before = probe.cpu_pct().and_then(|cpu| Ok((cpu, probe.rss_mb()?)));
    let (cid, mut metrics) = cas.put_file(file)?;
    let after = probe.cpu_pct().and_then(|cpu| Ok((cpu, probe.rss_mb()?)));
    let duration_s = (clock.now_s() - start).max(0.0);

    let energy = match (before, after) {
        (Ok((cpu0, rss0)), Ok((cpu1, rss1))) => {
            metrics.memory_used_mb = Some((rss1 - rss0).max(0.0));
            match EnergySample::new(cpu0, cpu1, duration_s, tdp_watts) {
                Ok(sample) => Some(sample),
                Err(e) => {
                    log::warn!("energy sample rejected: {e}");
                    None
                }
            }
        }
        (Err(e), _) | (_, Err(e)) => {
            log::warn!("resource probe unavailable: {e}");
            metrics.memory_used_mb = None;
            None
        }
    };
    Ok(MeasuredUpload { cid, metrics, energy })
}
