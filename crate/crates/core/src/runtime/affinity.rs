//! Thin wrappers over the Linux affinity syscalls.
//!
//! Everything here operates on the calling thread (`pid = 0`).

use std::io;
use std::mem;

use super::error::{LockError, Result};

/// A set of CPU indices, as accepted by `sched_setaffinity`.
#[derive(Clone)]
pub struct CpuSet(libc::cpu_set_t);

impl CpuSet {
    pub fn empty() -> Self {
        // SAFETY: cpu_set_t is a plain bitmask; all-zero is the empty set.
        let mut set: libc::cpu_set_t = unsafe { mem::zeroed() };
        unsafe { libc::CPU_ZERO(&mut set) };
        CpuSet(set)
    }

    pub fn single(cpu: usize) -> Self {
        let mut set = Self::empty();
        set.insert(cpu);
        set
    }

    pub fn insert(&mut self, cpu: usize) {
        if cpu < max_cpus() {
            unsafe { libc::CPU_SET(cpu, &mut self.0) };
        }
    }

    pub fn contains(&self, cpu: usize) -> bool {
        cpu < max_cpus() && unsafe { libc::CPU_ISSET(cpu, &self.0) }
    }

    pub fn cpus(&self) -> Vec<usize> {
        (0..max_cpus()).filter(|&c| self.contains(c)).collect()
    }
}

impl std::fmt::Debug for CpuSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.cpus()).finish()
    }
}

/// Upper bound on representable CPU indices.
pub fn max_cpus() -> usize {
    8 * mem::size_of::<libc::cpu_set_t>()
}

/// Number of CPUs configured on the machine (not only those we may run on).
pub fn configured_cpus() -> usize {
    let n = unsafe { libc::sysconf(libc::_SC_NPROCESSORS_CONF) };
    if n < 1 {
        1
    } else {
        n as usize
    }
}

/// The CPU the calling thread is executing on right now.
pub fn current_cpu() -> usize {
    let cpu = unsafe { libc::sched_getcpu() };
    if cpu < 0 {
        0
    } else {
        cpu as usize
    }
}

pub fn get_affinity() -> io::Result<CpuSet> {
    let mut set = CpuSet::empty();
    let rc = unsafe { libc::sched_getaffinity(0, mem::size_of::<libc::cpu_set_t>(), &mut set.0) };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(set)
}

pub fn set_affinity(set: &CpuSet) -> io::Result<()> {
    let rc = unsafe { libc::sched_setaffinity(0, mem::size_of::<libc::cpu_set_t>(), &set.0) };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// CPUs this process is allowed to run on.
pub fn allowed_cpus() -> Vec<usize> {
    get_affinity().map(|s| s.cpus()).unwrap_or_else(|_| vec![0])
}

/// Pins the calling thread to exactly `cpu` and yields until the kernel has
/// moved it there.
pub fn pin_current_thread(cpu: usize) -> Result<()> {
    let available = configured_cpus();
    if cpu >= available || cpu >= max_cpus() {
        return Err(LockError::CoreOutOfRange {
            core: cpu,
            available,
        });
    }
    set_affinity(&CpuSet::single(cpu))
        .map_err(|source| LockError::Affinity { core: cpu, source })?;
    // sched_setaffinity migrates synchronously for the calling thread, but be
    // certain before returning.
    while current_cpu() != cpu {
        std::thread::yield_now();
    }
    Ok(())
}

/// Whether it is worth spinning at all: on a single CPU a spinner only delays
/// the thread it is waiting for.
pub fn spinning_useful() -> bool {
    use std::sync::OnceLock;
    static USEFUL: OnceLock<bool> = OnceLock::new();
    *USEFUL.get_or_init(|| allowed_cpus().len() > 1)
}
