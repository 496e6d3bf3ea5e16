use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("resource probe unavailable: {0}")]
    Unavailable(String),
}

/// Source of CPU and memory readings.
pub trait ResourceProbe: Send + Sync {
    /// Instantaneous CPU utilisation, 0..=100 across all cores.
    fn cpu_pct(&self) -> Result<f64, ProbeError>;
    /// Resident set size of this process, in MiB.
    fn rss_mb(&self) -> Result<f64, ProbeError>;
}

/// Seconds on some monotonic timeline.
pub trait Clock: Send + Sync {
    fn now_s(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> MonotonicClock {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock::new()
    }
}

impl Clock for MonotonicClock {
    fn now_s(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Replays a fixed sequence of timestamps; the last one repeats.
#[derive(Debug)]
pub struct FakeClock {
    ticks: Mutex<VecDeque<f64>>,
    last: Mutex<f64>,
}

impl FakeClock {
    pub fn new(ticks: Vec<f64>) -> FakeClock {
        FakeClock {
            ticks: Mutex::new(ticks.into()),
            last: Mutex::new(0.0),
        }
    }
}

impl Clock for FakeClock {
    fn now_s(&self) -> f64 {
        let mut last = self.last.lock().unwrap();
        if let Some(t) = self.ticks.lock().unwrap().pop_front() {
            *last = t;
        }
        *last
    }
}

/// Deterministic probe for tests: replays scripted readings in order, the
/// last one repeating. An empty script makes every reading fail.
#[derive(Debug)]
pub struct FakeProbe {
    cpu: Mutex<VecDeque<f64>>,
    rss: Mutex<VecDeque<f64>>,
    fail: bool,
}

impl FakeProbe {
    pub fn new(cpu: Vec<f64>, rss_mb: Vec<f64>) -> FakeProbe {
        FakeProbe {
            cpu: Mutex::new(cpu.into()),
            rss: Mutex::new(rss_mb.into()),
            fail: false,
        }
    }

    pub fn failing() -> FakeProbe {
        FakeProbe {
            cpu: Mutex::new(VecDeque::new()),
            rss: Mutex::new(VecDeque::new()),
            fail: true,
        }
    }

    fn next(queue: &Mutex<VecDeque<f64>>) -> Option<f64> {
        let mut q = queue.lock().unwrap();
        if q.len() > 1 {
            q.pop_front()
        } else {
            q.front().copied()
        }
    }
}

impl ResourceProbe for FakeProbe {
    fn cpu_pct(&self) -> Result<f64, ProbeError> {
        if self.fail {
            return Err(ProbeError::Unavailable("scripted failure".into()));
        }
        FakeProbe::next(&self.cpu).ok_or_else(|| ProbeError::Unavailable("no cpu script".into()))
    }

    fn rss_mb(&self) -> Result<f64, ProbeError> {
        if self.fail {
            return Err(ProbeError::Unavailable("scripted failure".into()));
        }
        FakeProbe::next(&self.rss).ok_or_else(|| ProbeError::Unavailable("no rss script".into()))
    }
}

/// Linux sampler backed by `/proc`.
///
/// CPU utilisation is system-wide busy time over total time since the
/// previous reading (since boot for the first one), matching the
/// "instantaneous" non-blocking reading of common process utilities.
#[derive(Debug, Default)]
pub struct ProcfsProbe {
    last: Mutex<Option<CpuTimes>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CpuTimes {
    busy: u64,
    total: u64,
}

impl ProcfsProbe {
    pub fn new() -> ProcfsProbe {
        ProcfsProbe::default()
    }
}

fn parse_cpu_line(stat: &str) -> Option<CpuTimes> {
    let line = stat.lines().find(|l| l.starts_with("cpu "))?;
    let fields: Vec<u64> = line
        .split_whitespace()
        .skip(1)
        .map(|f| f.parse().ok())
        .collect::<Option<_>>()?;
    if fields.len() < 4 {
        return None;
    }
    // user nice system idle iowait irq softirq steal [guest guest_nice]
    // guest time is already folded into user/nice.
    let counted = &fields[..fields.len().min(8)];
    let total: u64 = counted.iter().sum();
    let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
    Some(CpuTimes {
        busy: total.saturating_sub(idle),
        total,
    })
}

fn parse_vm_rss_kb(status: &str) -> Option<u64> {
    status
        .lines()
        .find(|l| l.starts_with("VmRSS:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

impl ResourceProbe for ProcfsProbe {
    fn cpu_pct(&self) -> Result<f64, ProbeError> {
        let stat = std::fs::read_to_string("/proc/stat")
            .map_err(|e| ProbeError::Unavailable(format!("/proc/stat: {e}")))?;
        let now = parse_cpu_line(&stat)
            .ok_or_else(|| ProbeError::Unavailable("unparseable /proc/stat".into()))?;
        let mut last = self.last.lock().unwrap();
        let base = last.unwrap_or(CpuTimes { busy: 0, total: 0 });
        *last = Some(now);
        let total = now.total.saturating_sub(base.total);
        if total == 0 {
            return Ok(0.0);
        }
        let busy = now.busy.saturating_sub(base.busy);
        Ok((busy as f64 / total as f64 * 100.0).clamp(0.0, 100.0))
    }

    fn rss_mb(&self) -> Result<f64, ProbeError> {
        let status = std::fs::read_to_string("/proc/self/status")
            .map_err(|e| ProbeError::Unavailable(format!("/proc/self/status: {e}")))?;
        let kb = parse_vm_rss_kb(&status)
            .ok_or_else(|| ProbeError::Unavailable("VmRSS missing".into()))?;
        Ok(kb as f64 / 1024.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_proc_stat() {
        let stat = "cpu  100 0 50 800 50 0 0 0 0 0\ncpu0 1 2 3 4\n";
        let t = parse_cpu_line(stat).unwrap();
        assert_eq!(t, CpuTimes { busy: 150, total: 1000 });
    }

    #[test]
    fn parses_vm_rss() {
        let status = "Name:\tx\nVmRSS:\t   20480 kB\n";
        assert_eq!(parse_vm_rss_kb(status), Some(20480));
    }

    #[test]
    fn fake_probe_replays_then_repeats() {
        let p = FakeProbe::new(vec![20.0, 40.0], vec![1.0]);
        assert_eq!(p.cpu_pct().unwrap(), 20.0);
        assert_eq!(p.cpu_pct().unwrap(), 40.0);
        assert_eq!(p.cpu_pct().unwrap(), 40.0);
        assert_eq!(p.rss_mb().unwrap(), 1.0);
        assert!(FakeProbe::failing().cpu_pct().is_err());
    }

    #[test]
    fn monotonic_clock_never_goes_back() {
        let c = MonotonicClock::new();
        let a = c.now_s();
        let b = c.now_s();
        assert!(b >= a && a >= 0.0);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn procfs_readings_in_range() {
        let p = ProcfsProbe::new();
        for _ in 0..3 {
            let cpu = p.cpu_pct().unwrap();
            assert!((0.0..=100.0).contains(&cpu));
        }
        assert!(p.rss_mb().unwrap() > 0.0);
    }
}
