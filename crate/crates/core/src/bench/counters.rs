//! Per-thread hardware event counters over the Linux perf interface.

use std::fmt;
use std::str::FromStr;

use perf_event::events::{Cache, CacheOp, CacheResult, Event, Hardware, Software, WhichCache};
use perf_event::{Builder, Counter};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CounterError {
    /// The platform or its permissions do not provide the event.
    #[error("performance counter {event} unavailable: {reason}")]
    Unavailable { event: CounterEvent, reason: String },
    #[error("unknown counter event {0:?}")]
    UnknownEvent(String),
    #[error("reading performance counter failed: {0}")]
    Read(String),
}

/// Event counted around each critical section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CounterEvent {
    /// Generic cache references; on most cores these are last-level accesses.
    #[default]
    CacheReferences,
    LlcReadAccesses,
    LlcReadMisses,
    L1dReadMisses,
    /// Software clock in nanoseconds; available without hardware PMU access
    /// and useful to check the plumbing.
    TaskClock,
}

impl CounterEvent {
    pub const ALL: [CounterEvent; 5] = [
        CounterEvent::CacheReferences,
        CounterEvent::LlcReadAccesses,
        CounterEvent::LlcReadMisses,
        CounterEvent::L1dReadMisses,
        CounterEvent::TaskClock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CounterEvent::CacheReferences => "cache-references",
            CounterEvent::LlcReadAccesses => "llc-read-accesses",
            CounterEvent::LlcReadMisses => "llc-read-misses",
            CounterEvent::L1dReadMisses => "l1d-read-misses",
            CounterEvent::TaskClock => "task-clock",
        }
    }

    fn event(self) -> Event {
        let cache = |which, result| {
            Event::from(Cache {
                which,
                operation: CacheOp::READ,
                result,
            })
        };
        match self {
            CounterEvent::CacheReferences => Hardware::CACHE_REFERENCES.into(),
            CounterEvent::LlcReadAccesses => cache(WhichCache::LL, CacheResult::ACCESS),
            CounterEvent::LlcReadMisses => cache(WhichCache::LL, CacheResult::MISS),
            CounterEvent::L1dReadMisses => cache(WhichCache::L1D, CacheResult::MISS),
            CounterEvent::TaskClock => Software::TASK_CLOCK.into(),
        }
    }
}

impl fmt::Display for CounterEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CounterEvent {
    type Err = CounterError;

    fn from_str(s: &str) -> Result<Self, CounterError> {
        CounterEvent::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CounterError::UnknownEvent(s.to_string()))
    }
}

/// A running counter attached to one thread.
pub struct ThreadCounter {
    counter: Counter,
    event: CounterEvent,
}

impl fmt::Debug for ThreadCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThreadCounter")
            .field("event", &self.event)
            .finish()
    }
}

pub fn current_tid() -> i32 {
    // SAFETY: gettid has no preconditions.
    unsafe { libc::gettid() }
}

impl ThreadCounter {
    /// Opens and enables `event` for thread `tid` (user-space only).
    pub fn open(event: CounterEvent, tid: i32) -> Result<Self, CounterError> {
        let unavailable = |e: std::io::Error| CounterError::Unavailable {
            event,
            reason: e.to_string(),
        };
        let mut counter = Builder::new()
            .kind(event.event())
            .observe_pid(tid)
            .any_cpu()
            .build()
            .map_err(unavailable)?;
        counter.enable().map_err(unavailable)?;
        Ok(ThreadCounter { counter, event })
    }

    pub fn event(&self) -> CounterEvent {
        self.event
    }

    pub fn read(&mut self) -> Result<u64, CounterError> {
        self.counter
            .read()
            .map_err(|e| CounterError::Read(e.to_string()))
    }

    /// Runs `f` and returns its result with the counter increase it caused.
    pub fn measure<R>(&mut self, f: impl FnOnce() -> R) -> Result<(R, u64), CounterError> {
        let before = self.read()?;
        let r = f();
        let after = self.read()?;
        Ok((r, after.saturating_sub(before)))
    }
}
