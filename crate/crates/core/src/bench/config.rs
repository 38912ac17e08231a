use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::counters::{CounterError, CounterEvent};
use crate::runtime::LockError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("environment cannot run this benchmark: {0}")]
    Environment(String),
    #[error("no samples to summarize")]
    Empty,
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Counter(#[from] CounterError),
}

/// Lock under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Mbs,
    MbsR,
    Spinlock,
    Mutex,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Mbs,
        Variant::MbsR,
        Variant::Spinlock,
        Variant::Mutex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mbs => "mbs",
            Variant::MbsR => "mbs-r",
            Variant::Spinlock => "spinlock",
            Variant::Mutex => "mutex",
        }
    }

    pub fn migrates(self) -> bool {
        matches!(self, Variant::Mbs | Variant::MbsR)
    }

    /// Application threads used by default. The reserving variant leaves one
    /// core for the reservations, so it runs one thread fewer.
    pub fn default_threads(self) -> usize {
        match self {
            Variant::MbsR => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown variant {s:?}")))
    }
}

/// L1 data cache size from sysfs, falling back to 32 KiB.
pub fn l1d_bytes() -> usize {
    detect_l1d().unwrap_or(32 * 1024)
}

fn detect_l1d() -> Option<usize> {
    let base = std::path::Path::new("/sys/devices/system/cpu/cpu0/cache");
    for entry in std::fs::read_dir(base).ok()? {
        let dir = entry.ok()?.path();
        let read = |f: &str| std::fs::read_to_string(dir.join(f)).ok();
        if read("level")?.trim() != "1" || read("type")?.trim() != "Data" {
            continue;
        }
        return parse_size(read("size")?.trim());
    }
    None
}

/// Parses sizes such as `48K`, `1M` or `4096`.
pub fn parse_size(s: &str) -> Option<usize> {
    let s = s.trim();
    let (num, mult) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1024),
        'M' | 'm' => (&s[..s.len() - 1], 1024 * 1024),
        _ => (s, 1),
    };
    num.trim().parse::<usize>().ok().map(|n| n * mult)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub variant: Variant,
    /// Private buffer walked outside the critical section.
    pub lambda_bytes: usize,
    /// Shared buffer walked inside the critical section.
    pub sigma_bytes: usize,
    pub threads: usize,
    pub cycles: usize,
    /// CPU for the synchronization core; `None` uses the runtime default.
    pub sync_core: Option<usize>,
    pub cache_line_bytes: usize,
    pub counters_enabled: bool,
    pub counter_event: CounterEvent,
    /// Fail instead of sharing CPUs when there are too few of them.
    pub strict_pinning: bool,
    /// Record the buffer lines touched in the first cycle of each thread.
    pub trace_touches: bool,
}

impl BenchConfig {
    /// Defaults: both buffers a quarter of the L1 data cache, the variant's
    /// default thread count, 10 000 cycles.
    pub fn new(variant: Variant) -> Self {
        let quarter = l1d_bytes() / 4;
        BenchConfig {
            variant,
            lambda_bytes: quarter,
            sigma_bytes: quarter,
            threads: variant.default_threads(),
            cycles: 10_000,
            sync_core: None,
            cache_line_bytes: 64,
            counters_enabled: false,
            counter_event: CounterEvent::default(),
            strict_pinning: false,
            trace_touches: false,
        }
    }

    pub fn lambda_lines(&self) -> usize {
        self.lambda_bytes.div_ceil(self.cache_line_bytes)
    }

    pub fn sigma_lines(&self) -> usize {
        self.sigma_bytes.div_ceil(self.cache_line_bytes)
    }

    /// Cycles at the start of each thread excluded from statistics: 1%, at
    /// least 10, but never more than half the run.
    pub fn warmup_cycles(&self) -> usize {
        (self.cycles / 100).max(10).min(self.cycles / 2)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if !self.cache_line_bytes.is_power_of_two() || self.cache_line_bytes < 8 {
            return bad("cache line size must be a power of two of at least 8 bytes");
        }
        if self.sigma_bytes < self.cache_line_bytes {
            return bad("shared buffer must hold at least one cache line");
        }
        if self.threads == 0 {
            return bad("need at least one thread");
        }
        if self.cycles == 0 {
            return bad("need at least one cycle");
        }
        Ok(())
    }
}
