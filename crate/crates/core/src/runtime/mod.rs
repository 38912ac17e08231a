//! Migration-based mutexes and their lock-based baselines.
//!
//! A [`SyncCore`] owns one executor thread pinned to a CPU. Every critical
//! section of an [`MbsMutex`] bound to that core runs there, one at a time and
//! without preemption by other requests, so the protected data stays in that
//! core's caches. Two mechanisms move the control flow:
//!
//! * [`MbsMutex::critical`] ships the closure to the executor (default);
//! * [`MbsMutex::lock`] re-binds the calling thread's CPU affinity to the
//!   synchronization core until the guard is released.
//!
//! [`BaselineLock`] provides a ticket spinlock and a FIFO mutex behind the
//! same [`CriticalSection`] interface.

pub mod affinity;
mod baseline;
mod error;
mod mutex;
mod reserve;
mod sync_core;

use std::sync::atomic::{AtomicU64, Ordering};

pub use baseline::{BaselineGuard, BaselineKind, BaselineLock, FifoMutex, TicketLock};
pub use error::{ErrorKind, LockError, Result};
pub use mutex::{same_sync_core, MbsGuard, MbsMutex, Migration};
pub use sync_core::{
    current_requester, is_claimed, AdmissionPolicy, CoreState, CriticalSectionRequest, IdleMode,
    ServiceRecord, SyncCore, SyncCoreConfig,
};

/// Environment variable listing the CPUs to use as synchronization cores.
pub const SYNC_CORES_ENV: &str = "MBS_SYNC_CORES";

/// Uniform "run this under mutual exclusion" interface shared by all lock
/// variants.
pub trait CriticalSection<T: ?Sized>: Sync {
    fn critical<R, F>(&self, priority: i64, f: F) -> Result<R>
    where
        F: FnOnce(&mut T) -> R + Send,
        R: Send;
}

/// Process-unique, non-zero identifier of the calling thread.
pub(crate) fn thread_token() -> u64 {
    static NEXT: AtomicU64 = AtomicU64::new(1);
    thread_local! {
        static TOKEN: u64 = NEXT.fetch_add(1, Ordering::Relaxed);
    }
    TOKEN.with(|t| *t)
}

/// `CLOCK_MONOTONIC_RAW` in nanoseconds.
pub fn monotonic_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC_RAW, &mut ts) };
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Parses a comma-separated CPU list such as `"3"` or `"2,3"`.
pub fn parse_core_list(value: &str) -> Result<Vec<usize>> {
    let bad = |reason: &str| LockError::BadEnvironment {
        value: value.to_string(),
        reason: reason.to_string(),
    };
    let mut cores = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(bad("empty entry"));
        }
        let core: usize = part.parse().map_err(|_| bad("not a CPU index"))?;
        if cores.contains(&core) {
            return Err(bad("duplicate CPU"));
        }
        cores.push(core);
    }
    Ok(cores)
}

/// Synchronization cores requested through `MBS_SYNC_CORES`, if set.
pub fn sync_cores_from_env() -> Result<Option<Vec<usize>>> {
    match std::env::var(SYNC_CORES_ENV) {
        Ok(v) => parse_core_list(&v).map(Some),
        Err(_) => Ok(None),
    }
}

/// The environment's first synchronization core, or else the highest CPU
/// this process may run on.
pub fn default_sync_core() -> Result<usize> {
    if let Some(cores) = sync_cores_from_env()? {
        return Ok(cores[0]);
    }
    Ok(*affinity::allowed_cpus().last().unwrap_or(&0))
}
