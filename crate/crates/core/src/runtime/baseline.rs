//! Conventional locks used as the comparison baseline: a ticket spinlock and
//! a FIFO suspending mutex. Both hand the lock over in request order.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use super::affinity;
use super::error::{LockError, Result};
use super::{thread_token, CriticalSection};

/// Busy-waiting lock granted in ticket order.
#[derive(Debug, Default)]
pub struct TicketLock {
    next: AtomicU64,
    serving: AtomicU64,
    holder: AtomicU64,
}

impl TicketLock {
    pub const fn new() -> Self {
        TicketLock {
            next: AtomicU64::new(0),
            serving: AtomicU64::new(0),
            holder: AtomicU64::new(0),
        }
    }

    pub fn raw_lock(&self) -> Result<()> {
        let me = thread_token();
        if self.holder.load(Ordering::Acquire) == me {
            return Err(LockError::AlreadyHeld);
        }
        let ticket = self.next.fetch_add(1, Ordering::AcqRel);
        let spin = affinity::spinning_useful();
        let mut spins = 0u32;
        while self.serving.load(Ordering::Acquire) != ticket {
            if spin && spins < 1 << 12 {
                spins += 1;
                std::hint::spin_loop();
            } else {
                // Holder is probably descheduled.
                spins = 0;
                std::thread::yield_now();
            }
        }
        self.holder.store(me, Ordering::Release);
        Ok(())
    }

    pub fn raw_unlock(&self) -> Result<()> {
        if self.holder.load(Ordering::Acquire) != thread_token() {
            return Err(LockError::NotHolder);
        }
        self.holder.store(0, Ordering::Release);
        self.serving.fetch_add(1, Ordering::AcqRel);
        Ok(())
    }

    /// Threads currently waiting for their ticket.
    pub fn waiting(&self) -> u64 {
        let next = self.next.load(Ordering::Acquire);
        let serving = self.serving.load(Ordering::Acquire);
        let held = u64::from(self.holder.load(Ordering::Acquire) != 0);
        next.saturating_sub(serving).saturating_sub(held)
    }
}

#[derive(Debug, Default)]
struct Tickets {
    next: u64,
    serving: u64,
}

/// Suspending lock; waiters sleep and are admitted in arrival order.
#[derive(Debug, Default)]
pub struct FifoMutex {
    tickets: Mutex<Tickets>,
    turn: Condvar,
    holder: AtomicU64,
}

impl FifoMutex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raw_lock(&self) -> Result<()> {
        let me = thread_token();
        if self.holder.load(Ordering::Acquire) == me {
            return Err(LockError::AlreadyHeld);
        }
        let mut t = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
        let ticket = t.next;
        t.next += 1;
        while t.serving != ticket {
            t = self.turn.wait(t).unwrap_or_else(|e| e.into_inner());
        }
        self.holder.store(me, Ordering::Release);
        Ok(())
    }

    pub fn raw_unlock(&self) -> Result<()> {
        if self.holder.load(Ordering::Acquire) != thread_token() {
            return Err(LockError::NotHolder);
        }
        self.holder.store(0, Ordering::Release);
        let mut t = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
        t.serving += 1;
        drop(t);
        self.turn.notify_all();
        Ok(())
    }

    pub fn waiting(&self) -> u64 {
        let t = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
        let held = u64::from(self.holder.load(Ordering::Acquire) != 0);
        (t.next - t.serving).saturating_sub(held)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Spinlock,
    Mutex,
}

#[derive(Debug)]
enum RawBaseline {
    Spin(TicketLock),
    Mutex(FifoMutex),
}

/// A data-carrying baseline lock with the same contract as [`MbsMutex`](super::MbsMutex).
pub struct BaselineLock<T: ?Sized> {
    kind: BaselineKind,
    raw: RawBaseline,
    data: UnsafeCell<T>,
}

unsafe impl<T: ?Sized + Send> Send for BaselineLock<T> {}
unsafe impl<T: ?Sized + Send> Sync for BaselineLock<T> {}

impl<T> BaselineLock<T> {
    pub fn new(kind: BaselineKind, value: T) -> Self {
        let raw = match kind {
            BaselineKind::Spinlock => RawBaseline::Spin(TicketLock::new()),
            BaselineKind::Mutex => RawBaseline::Mutex(FifoMutex::new()),
        };
        BaselineLock {
            kind,
            raw,
            data: UnsafeCell::new(value),
        }
    }

    pub fn into_inner(self) -> T {
        self.data.into_inner()
    }
}

impl<T: ?Sized> BaselineLock<T> {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn raw_lock(&self) -> Result<()> {
        match &self.raw {
            RawBaseline::Spin(l) => l.raw_lock(),
            RawBaseline::Mutex(l) => l.raw_lock(),
        }
    }

    pub fn raw_unlock(&self) -> Result<()> {
        match &self.raw {
            RawBaseline::Spin(l) => l.raw_unlock(),
            RawBaseline::Mutex(l) => l.raw_unlock(),
        }
    }

    pub fn waiting(&self) -> u64 {
        match &self.raw {
            RawBaseline::Spin(l) => l.waiting(),
            RawBaseline::Mutex(l) => l.waiting(),
        }
    }

    pub fn lock(&self) -> Result<BaselineGuard<'_, T>> {
        self.raw_lock()?;
        Ok(BaselineGuard { lock: self })
    }

    pub fn get_mut(&mut self) -> &mut T {
        self.data.get_mut()
    }
}

impl<T: ?Sized + Send> CriticalSection<T> for BaselineLock<T> {
    fn critical<R, F>(&self, _priority: i64, f: F) -> Result<R>
    where
        F: FnOnce(&mut T) -> R + Send,
        R: Send,
    {
        let mut g = self.lock()?;
        Ok(f(&mut g))
    }
}

pub struct BaselineGuard<'a, T: ?Sized> {
    lock: &'a BaselineLock<T>,
}

impl<T: ?Sized> std::ops::Deref for BaselineGuard<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        unsafe { &*self.lock.data.get() }
    }
}

impl<T: ?Sized> std::ops::DerefMut for BaselineGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        unsafe { &mut *self.lock.data.get() }
    }
}

impl<T: ?Sized> Drop for BaselineGuard<'_, T> {
    fn drop(&mut self) {
        let _ = self.lock.raw_unlock();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn single_thread_lock_unlock() {
        for kind in [BaselineKind::Spinlock, BaselineKind::Mutex] {
            let l = BaselineLock::new(kind, 0u32);
            l.raw_lock().unwrap();
            l.raw_unlock().unwrap();
            assert_eq!(l.waiting(), 0);
        }
    }

    #[test]
    fn unlock_without_hold_is_usage_error() {
        for kind in [BaselineKind::Spinlock, BaselineKind::Mutex] {
            let l = BaselineLock::new(kind, ());
            assert!(matches!(l.raw_unlock(), Err(LockError::NotHolder)));
        }
    }

    #[test]
    fn relock_by_holder_is_rejected() {
        let l = BaselineLock::new(BaselineKind::Spinlock, ());
        l.raw_lock().unwrap();
        assert!(matches!(l.raw_lock(), Err(LockError::AlreadyHeld)));
        l.raw_unlock().unwrap();
    }

    #[test]
    fn unlock_from_other_thread_rejected() {
        let l = Arc::new(BaselineLock::new(BaselineKind::Mutex, ()));
        l.raw_lock().unwrap();
        let l2 = Arc::clone(&l);
        let r = std::thread::spawn(move || l2.raw_unlock()).join().unwrap();
        assert!(matches!(r, Err(LockError::NotHolder)));
        l.raw_unlock().unwrap();
    }

    fn grant_order(kind: BaselineKind) -> Vec<char> {
        let l = Arc::new(BaselineLock::new(kind, Vec::new()));
        l.raw_lock().unwrap();
        let mut handles = Vec::new();
        for (i, name) in ['A', 'B', 'C'].into_iter().enumerate() {
            let l2 = Arc::clone(&l);
            handles.push(std::thread::spawn(move || {
                l2.critical(0, |v: &mut Vec<char>| v.push(name)).unwrap();
            }));
            while l.waiting() < i as u64 + 1 {
                std::thread::yield_now();
            }
        }
        l.raw_unlock().unwrap();
        for h in handles {
            h.join().unwrap();
        }
        Arc::try_unwrap(l).ok().unwrap().into_inner()
    }

    #[test]
    fn ticket_order_is_fifo() {
        assert_eq!(grant_order(BaselineKind::Spinlock), vec!['A', 'B', 'C']);
    }

    #[test]
    fn mutex_order_is_fifo() {
        assert_eq!(grant_order(BaselineKind::Mutex), vec!['A', 'B', 'C']);
    }

    #[test]
    fn four_threads_count_exactly() {
        for kind in [BaselineKind::Spinlock, BaselineKind::Mutex] {
            let l = Arc::new(BaselineLock::new(kind, 0u64));
            let hs: Vec<_> = (0..4)
                .map(|_| {
                    let l = Arc::clone(&l);
                    std::thread::spawn(move || {
                        for _ in 0..10_000 {
                            l.critical(0, |c| *c += 1).unwrap();
                        }
                    })
                })
                .collect();
            for h in hs {
                h.join().unwrap();
            }
            assert_eq!(*l.lock().unwrap(), 40_000);
        }
    }
}
