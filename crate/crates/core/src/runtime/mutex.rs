use std::cell::UnsafeCell;
use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use super::affinity::{self, CpuSet};
use super::error::{LockError, Result};
use super::reserve;
use super::sync_core::{self, CoreState, Handover, SyncCore};
use super::{thread_token, CriticalSection};

/// How a critical section reaches its synchronization core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Migration {
    /// Ship the closure to the executor and wait for the result.
    #[default]
    Delegate,
    /// Re-bind the calling thread's affinity to the synchronization core for
    /// the duration of the critical section.
    Affinity,
}

/// State kept between `raw_lock` and `raw_unlock` of an affinity migration.
struct Held {
    handover: Arc<Handover>,
    origin: usize,
    saved_mask: Option<CpuSet>,
    reservation: Option<reserve::Reservation>,
}

/// A mutex whose critical sections always execute on one synchronization core.
///
/// With `reservation` set (MBS+R) the caller's origin core is kept busy while
/// the critical section runs elsewhere, and the caller resumes on that core.
pub struct MbsMutex<T: ?Sized> {
    core: SyncCore,
    reservation: bool,
    migration: Migration,
    holder: AtomicU64,
    poison: Mutex<Option<String>>,
    held: Mutex<Option<Held>>,
    data: UnsafeCell<T>,
}

unsafe impl<T: ?Sized + Send> Send for MbsMutex<T> {}
unsafe impl<T: ?Sized + Send> Sync for MbsMutex<T> {}

struct SendPtr<T: ?Sized>(*mut T);
unsafe impl<T: ?Sized + Send> Send for SendPtr<T> {}

impl<T> MbsMutex<T> {
    pub fn new(core: &SyncCore, reservation: bool, value: T) -> Result<Self> {
        if core.state() != CoreState::Running {
            return Err(LockError::ShutDown(core.core_id()));
        }
        Ok(MbsMutex {
            core: core.clone(),
            reservation,
            migration: Migration::default(),
            holder: AtomicU64::new(0),
            poison: Mutex::new(None),
            held: Mutex::new(None),
            data: UnsafeCell::new(value),
        })
    }

    pub fn into_inner(self) -> T {
        self.data.into_inner()
    }
}

impl<T: ?Sized> MbsMutex<T> {
    /// Selects the mechanism [`critical`](Self::critical) uses.
    pub fn with_migration(mut self, migration: Migration) -> Self
    where
        T: Sized,
    {
        self.migration = migration;
        self
    }

    pub fn migration(&self) -> Migration {
        self.migration
    }

    pub fn sync_core(&self) -> &SyncCore {
        &self.core
    }

    pub fn reservation(&self) -> bool {
        self.reservation
    }

    /// Token of the thread whose critical section is executing, if any.
    pub fn holder(&self) -> Option<u64> {
        match self.holder.load(Ordering::Acquire) {
            0 => None,
            h => Some(h),
        }
    }

    pub fn is_poisoned(&self) -> bool {
        self.poison_state().is_some()
    }

    pub fn get_mut(&mut self) -> &mut T {
        self.data.get_mut()
    }

    fn poison_state(&self) -> Option<String> {
        self.poison
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn set_poison(&self, msg: String) {
        let mut p = self.poison.lock().unwrap_or_else(|e| e.into_inner());
        if p.is_none() {
            *p = Some(msg);
        }
    }

    fn held(&self) -> MutexGuard<'_, Option<Held>> {
        self.held.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn precheck(&self, me: u64) -> Result<()> {
        if let Some(msg) = self.poison_state() {
            return Err(LockError::Poisoned(msg));
        }
        if self.holder.load(Ordering::Acquire) == me {
            return Err(LockError::AlreadyHeld);
        }
        if self.core.state() != CoreState::Running {
            return Err(LockError::ShutDown(self.core.core_id()));
        }
        sync_core::check_nesting(self.core.core_id())
    }

    /// Migrates the calling thread onto the synchronization core and takes
    /// the lock. Pair with [`raw_unlock`](Self::raw_unlock) on the same thread.
    pub fn raw_lock(&self, priority: i64) -> Result<()> {
        let me = thread_token();
        self.precheck(me)?;
        let core_id = self.core.core_id();
        let origin = affinity::current_cpu();
        let saved_mask = affinity::get_affinity().ok();

        let handover = self.core.request_grant(me, priority)?;
        let reserve_here = self.reservation && origin != core_id && affinity::spinning_useful();
        handover.wait_granted(reserve_here);

        if let Err(e) = affinity::pin_current_thread(core_id) {
            handover.release();
            return Err(e);
        }
        // Nested locks start on a sync core; only application cores are reserved.
        let reservation = if self.reservation && origin != core_id && !sync_core::is_claimed(origin)
        {
            Some(reserve::Reservation::hold(origin))
        } else {
            None
        };

        self.holder.store(me, Ordering::Release);
        sync_core::push_held(core_id);
        *self.held() = Some(Held {
            handover,
            origin,
            saved_mask,
            reservation,
        });
        Ok(())
    }

    /// Releases the lock and migrates the calling thread back.
    pub fn raw_unlock(&self) -> Result<()> {
        let me = thread_token();
        if self.holder.load(Ordering::Acquire) != me {
            return Err(LockError::NotHolder);
        }
        let held = self.held().take().ok_or(LockError::NotHolder)?;
        self.holder.store(0, Ordering::Release);
        sync_core::pop_held(self.core.core_id());

        drop(held.reservation);
        if self.reservation {
            // MBS+R resumes exactly on the origin core.
            let _ = affinity::pin_current_thread(held.origin);
        }
        if let Some(mask) = &held.saved_mask {
            let _ = affinity::set_affinity(mask);
        }
        held.handover.release();
        Ok(())
    }

    /// Takes the lock by migrating the calling thread (see [`raw_lock`](Self::raw_lock)).
    pub fn lock(&self, priority: i64) -> Result<MbsGuard<'_, T>> {
        self.raw_lock(priority)?;
        Ok(MbsGuard {
            mutex: self,
            _not_send: PhantomData,
        })
    }

    /// Executes `f` exactly once on the synchronization core and returns its
    /// result. A panic inside `f` poisons the mutex.
    pub fn critical<R, F>(&self, priority: i64, f: F) -> Result<R>
    where
        F: FnOnce(&mut T) -> R + Send,
        R: Send,
        T: Send,
    {
        match self.migration {
            Migration::Delegate => self.critical_delegate(priority, f),
            Migration::Affinity => {
                let mut guard = self.lock(priority)?;
                let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(&mut guard)));
                match r {
                    Ok(v) => {
                        guard.unlock()?;
                        Ok(v)
                    }
                    Err(payload) => {
                        let msg = panic_message(payload.as_ref());
                        self.set_poison(msg.clone());
                        drop(guard);
                        Err(LockError::Poisoned(msg))
                    }
                }
            }
        }
    }

    fn critical_delegate<R, F>(&self, priority: i64, f: F) -> Result<R>
    where
        F: FnOnce(&mut T) -> R + Send,
        R: Send,
        T: Send,
    {
        let me = thread_token();
        self.precheck(me)?;
        let data = SendPtr(self.data.get());
        let holder = &self.holder;
        let outcome = self
            .core
            .delegate(me, priority, self.reservation, move || {
                struct ClearHolder<'a>(&'a AtomicU64);
                impl Drop for ClearHolder<'_> {
                    fn drop(&mut self) {
                        self.0.store(0, Ordering::Release);
                    }
                }
                let data = data;
                holder.store(me, Ordering::Release);
                let _clear = ClearHolder(holder);
                // SAFETY: the executor serves one request at a time, so this is
                // the only live reference to the protected data.
                f(unsafe { &mut *data.0 })
            })?;
        outcome.map_err(|payload| {
            let msg = panic_message(payload.as_ref());
            self.set_poison(msg.clone());
            LockError::Poisoned(msg)
        })
    }
}

impl<T: Send> CriticalSection<T> for MbsMutex<T> {
    fn critical<R, F>(&self, priority: i64, f: F) -> Result<R>
    where
        F: FnOnce(&mut T) -> R + Send,
        R: Send,
    {
        MbsMutex::critical(self, priority, f)
    }
}

impl<T: ?Sized> std::fmt::Debug for MbsMutex<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MbsMutex")
            .field("core", &self.core.core_id())
            .field("reservation", &self.reservation)
            .field("migration", &self.migration)
            .field("holder", &self.holder())
            .finish_non_exhaustive()
    }
}

pub(crate) fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "critical section panicked".to_string()
    }
}

/// Holds an [`MbsMutex`] while the owning thread runs on the synchronization
/// core. Dropping it migrates the thread back.
pub struct MbsGuard<'a, T: ?Sized> {
    mutex: &'a MbsMutex<T>,
    _not_send: PhantomData<*const ()>,
}

impl<T: ?Sized> MbsGuard<'_, T> {
    pub fn unlock(self) -> Result<()> {
        let m = self.mutex;
        std::mem::forget(self);
        m.raw_unlock()
    }
}

impl<T: ?Sized> Deref for MbsGuard<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        unsafe { &*self.mutex.data.get() }
    }
}

impl<T: ?Sized> DerefMut for MbsGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        unsafe { &mut *self.mutex.data.get() }
    }
}

impl<T: ?Sized> Drop for MbsGuard<'_, T> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.mutex.set_poison("holder panicked".into());
        }
        let _ = self.mutex.raw_unlock();
    }
}

/// Checks that two mutexes share an executor.
pub fn same_sync_core<A: ?Sized, B: ?Sized>(a: &MbsMutex<A>, b: &MbsMutex<B>) -> bool {
    a.core.same_core(&b.core)
}
