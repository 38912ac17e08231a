//! Synchronization cores: one pinned executor thread per core that admits
//! critical-section requests one at a time and runs each to completion.

use std::cell::Cell;
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::atomic::{self, AtomicBool, AtomicI32, AtomicU64, AtomicUsize};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, OnceLock};
use std::thread::{self, JoinHandle, Thread};

use super::affinity;
use super::error::{LockError, Result};
use super::{monotonic_ns, thread_token};

use atomic::Ordering::{AcqRel, Acquire, Relaxed, Release};

/// Order in which queued requests are admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdmissionPolicy {
    /// Highest priority first; equal priorities in arrival order.
    #[default]
    Priority,
    /// Strict arrival order.
    Fifo,
}

/// What the executor does while its queue is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdleMode {
    /// Poll the queue. On a single-CPU machine polling degrades to yielding.
    #[default]
    Spin,
    /// Sleep on a condition variable until a request arrives.
    Park,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreState {
    Running,
    ShutDown,
}

#[derive(Debug, Clone, Default)]
pub struct SyncCoreConfig {
    pub policy: AdmissionPolicy,
    pub idle: IdleMode,
    /// Keep a [`ServiceRecord`] for every served request.
    pub record_service: bool,
}

/// One served critical section, as seen by the executor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRecord {
    pub seqno: u64,
    pub requester_id: u64,
    pub priority: i64,
    pub enqueue_ns: u64,
    pub start_ns: u64,
    pub end_ns: u64,
}

/// A type-erased delegated closure living on the requester's stack.
pub(crate) struct Job {
    data: *const (),
    run: unsafe fn(*const (), &dyn Fn()),
}

// SAFETY: the requester blocks until the executor has finished with `data`.
unsafe impl Send for Job {}

/// Rendezvous between the executor and a thread that migrates onto the core.
pub(crate) struct Handover {
    granted: AtomicBool,
    released: AtomicBool,
    waiter: Thread,
    executor: Thread,
    shared: Arc<Shared>,
    served: Mutex<Option<Served>>,
}

impl Handover {
    pub(crate) fn wait_granted(&self, reserve_origin: bool) {
        wait_flag(&self.granted, reserve_origin);
    }

    pub(crate) fn release(&self) {
        let served = self.served.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(s) = served {
            self.shared.complete(&s);
        }
        let executor = self.executor.clone();
        self.released.store(true, Release);
        executor.unpark();
    }
}

pub(crate) enum Work {
    Delegate(Job),
    Grant(Arc<Handover>),
}

/// A request waiting for admission on a synchronization core.
pub struct CriticalSectionRequest {
    pub requester_id: u64,
    pub priority: i64,
    pub seqno: u64,
    pub enqueue_time_ns: u64,
    pub(crate) work: Work,
    key: (i64, Reverse<u64>),
}

impl PartialEq for CriticalSectionRequest {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for CriticalSectionRequest {}
impl PartialOrd for CriticalSectionRequest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for CriticalSectionRequest {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

struct Queue {
    heap: BinaryHeap<CriticalSectionRequest>,
    next_seqno: u64,
    stopping: bool,
}

/// Bookkeeping for a request that has been admitted.
struct Served {
    requester_id: u64,
    priority: i64,
    seqno: u64,
    enqueue_ns: u64,
    start_ns: u64,
}

struct Shared {
    core_id: usize,
    config: SyncCoreConfig,
    queue: Mutex<Queue>,
    wakeup: Condvar,
    pending: AtomicUsize,
    idle_parked: AtomicBool,
    executor: OnceLock<Thread>,
    executor_tid: AtomicI32,
    busy: AtomicBool,
    served: AtomicU64,
    log: Mutex<Vec<ServiceRecord>>,
}

impl Shared {
    fn queue(&self) -> MutexGuard<'_, Queue> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs before the requester learns its critical section is over.
    fn complete(&self, s: &Served) {
        let end_ns = monotonic_ns();
        if self.config.record_service {
            self.log
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(ServiceRecord {
                    seqno: s.seqno,
                    requester_id: s.requester_id,
                    priority: s.priority,
                    enqueue_ns: s.enqueue_ns,
                    start_ns: s.start_ns,
                    end_ns,
                });
        }
        self.served.fetch_add(1, AcqRel);
        self.busy.store(false, Release);
    }
}

struct Inner {
    shared: Arc<Shared>,
    join: Mutex<Option<JoinHandle<()>>>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        let _ = shutdown_inner(self, true);
    }
}

/// Handle to a synchronization core. Cloning shares the same executor; the
/// executor drains and stops when the last handle is dropped.
#[derive(Clone)]
pub struct SyncCore {
    inner: Arc<Inner>,
}

fn claims() -> MutexGuard<'static, BTreeSet<usize>> {
    static CLAIMS: Mutex<BTreeSet<usize>> = Mutex::new(BTreeSet::new());
    CLAIMS.lock().unwrap_or_else(|e| e.into_inner())
}

/// Whether `core` currently hosts a synchronization-core executor.
pub fn is_claimed(core: usize) -> bool {
    claims().contains(&core)
}

thread_local! {
    // Set on executor threads; a delegated closure runs "inside" this core.
    static EXECUTOR_CORE: Cell<Option<usize>> = const { Cell::new(None) };
    // Cores whose critical sections the current thread has migrated into.
    static HELD_CORES: std::cell::RefCell<Vec<usize>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Rejects a request for `requested` unless it is strictly above every core
/// the current control flow already holds.
pub(crate) fn check_nesting(requested: usize) -> Result<()> {
    let mut highest = EXECUTOR_CORE.with(|c| c.get());
    HELD_CORES.with(|h| {
        for &c in h.borrow().iter() {
            highest = Some(highest.map_or(c, |m: usize| m.max(c)));
        }
    });
    match highest {
        Some(held) if requested <= held => Err(LockError::NestingOrder { held, requested }),
        _ => Ok(()),
    }
}

pub(crate) fn push_held(core: usize) {
    HELD_CORES.with(|h| h.borrow_mut().push(core));
}

pub(crate) fn pop_held(core: usize) {
    HELD_CORES.with(|h| {
        let mut h = h.borrow_mut();
        if let Some(pos) = h.iter().rposition(|&c| c == core) {
            h.remove(pos);
        }
    });
}

const SPIN_LIMIT: u32 = 1 << 10;

/// Blocks until `flag` is set. With `reserve`, the calling thread keeps its
/// CPU busy instead of sleeping.
fn wait_flag(flag: &AtomicBool, reserve: bool) {
    if reserve {
        while !flag.load(Acquire) {
            std::hint::spin_loop();
        }
        return;
    }
    let mut spins = 0;
    while !flag.load(Acquire) {
        if spins < SPIN_LIMIT && affinity::spinning_useful() {
            spins += 1;
            std::hint::spin_loop();
        } else {
            thread::park();
        }
    }
}

impl SyncCore {
    /// Starts an executor pinned to `core_id` with default settings.
    pub fn new(core_id: usize, policy: AdmissionPolicy) -> Result<Self> {
        Self::with_config(
            core_id,
            SyncCoreConfig {
                policy,
                ..SyncCoreConfig::default()
            },
        )
    }

    pub fn with_config(core_id: usize, config: SyncCoreConfig) -> Result<Self> {
        let available = affinity::configured_cpus();
        if core_id >= available || core_id >= affinity::max_cpus() {
            return Err(LockError::CoreOutOfRange {
                core: core_id,
                available,
            });
        }
        if !claims().insert(core_id) {
            return Err(LockError::CoreClaimed(core_id));
        }

        let shared = Arc::new(Shared {
            core_id,
            config,
            queue: Mutex::new(Queue {
                heap: BinaryHeap::new(),
                next_seqno: 0,
                stopping: false,
            }),
            wakeup: Condvar::new(),
            pending: AtomicUsize::new(0),
            idle_parked: AtomicBool::new(false),
            executor: OnceLock::new(),
            executor_tid: AtomicI32::new(0),
            busy: AtomicBool::new(false),
            served: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        });

        let (tx, rx) = mpsc::channel();
        let exec_shared = Arc::clone(&shared);
        let spawned = thread::Builder::new()
            .name(format!("mbs-sync-{core_id}"))
            .spawn(move || {
                if let Err(e) = affinity::pin_current_thread(core_id) {
                    let _ = tx.send(Err(e));
                    return;
                }
                exec_shared
                    .executor_tid
                    .store(unsafe { libc::gettid() }, Relaxed);
                let _ = exec_shared.executor.set(thread::current());
                let _ = tx.send(Ok(()));
                drop(tx);
                EXECUTOR_CORE.with(|c| c.set(Some(core_id)));
                executor_loop(&exec_shared);
            });
        let handle = match spawned {
            Ok(h) => h,
            Err(e) => {
                claims().remove(&core_id);
                return Err(LockError::Spawn(e));
            }
        };
        match rx.recv() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => {
                let _ = handle.join();
                claims().remove(&core_id);
                return Err(e);
            }
            Err(_) => {
                let _ = handle.join();
                claims().remove(&core_id);
                return Err(LockError::Spawn(std::io::Error::other(
                    "executor exited during start-up",
                )));
            }
        }

        Ok(SyncCore {
            inner: Arc::new(Inner {
                shared,
                join: Mutex::new(Some(handle)),
            }),
        })
    }

    pub fn core_id(&self) -> usize {
        self.inner.shared.core_id
    }

    pub fn policy(&self) -> AdmissionPolicy {
        self.inner.shared.config.policy
    }

    pub fn state(&self) -> CoreState {
        if self.inner.shared.queue().stopping {
            CoreState::ShutDown
        } else {
            CoreState::Running
        }
    }

    /// Requests waiting for admission (not counting the one being served).
    pub fn queued(&self) -> usize {
        self.inner.shared.queue().heap.len()
    }

    /// Whether a critical section is executing right now.
    pub fn is_busy(&self) -> bool {
        self.inner.shared.busy.load(Acquire)
    }

    pub fn served(&self) -> u64 {
        self.inner.shared.served.load(Acquire)
    }

    /// Kernel thread id of the executor, for attaching per-thread counters.
    pub fn executor_tid(&self) -> i32 {
        self.inner.shared.executor_tid.load(Relaxed)
    }

    /// Service history; empty unless `record_service` was configured.
    pub fn service_log(&self) -> Vec<ServiceRecord> {
        self.inner
            .shared
            .log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Stops the executor. Without `drain`, fails if a critical section is
    /// running or requests are queued; with `drain`, serves them first.
    pub fn shutdown(&self, drain: bool) -> Result<()> {
        shutdown_inner(&self.inner, drain)
    }

    fn submit(&self, requester_id: u64, priority: i64, work: Work) -> Result<u64> {
        let shared = &self.inner.shared;
        let seqno = {
            let mut q = shared.queue();
            if q.stopping {
                return Err(LockError::ShutDown(shared.core_id));
            }
            let seqno = q.next_seqno;
            q.next_seqno += 1;
            let key = match shared.config.policy {
                AdmissionPolicy::Priority => (priority, Reverse(seqno)),
                AdmissionPolicy::Fifo => (0, Reverse(seqno)),
            };
            q.heap.push(CriticalSectionRequest {
                requester_id,
                priority,
                seqno,
                enqueue_time_ns: monotonic_ns(),
                work,
                key,
            });
            shared.pending.fetch_add(1, AcqRel);
            seqno
        };
        if shared.idle_parked.load(Acquire) {
            shared.wakeup.notify_one();
        }
        Ok(seqno)
    }

    /// Runs `f` on the executor and returns its outcome; a panic inside `f`
    /// is caught and handed back as `Err`.
    pub(crate) fn delegate<F, R>(
        &self,
        requester_id: u64,
        priority: i64,
        reserve_origin: bool,
        f: F,
    ) -> Result<thread::Result<R>>
    where
        F: FnOnce() -> R + Send,
        R: Send,
    {
        struct Slot<F, R> {
            f: std::cell::UnsafeCell<Option<F>>,
            out: std::cell::UnsafeCell<Option<thread::Result<R>>>,
            done: AtomicBool,
            waiter: Thread,
        }

        unsafe fn run<F: FnOnce() -> R, R>(p: *const (), finish: &dyn Fn()) {
            let slot = &*(p as *const Slot<F, R>);
            let f = (*slot.f.get()).take().expect("job run twice");
            let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
            *slot.out.get() = Some(r);
            finish();
            // The slot may be freed as soon as `done` is observed.
            let waiter = slot.waiter.clone();
            slot.done.store(true, Release);
            waiter.unpark();
        }

        let slot = Slot {
            f: std::cell::UnsafeCell::new(Some(f)),
            out: std::cell::UnsafeCell::new(None),
            done: AtomicBool::new(false),
            waiter: thread::current(),
        };
        let job = Job {
            data: &slot as *const Slot<F, R> as *const (),
            run: run::<F, R>,
        };
        self.submit(requester_id, priority, Work::Delegate(job))?;
        // Reserving only makes sense when we are not sitting on the sync core.
        let reserve = reserve_origin && affinity::current_cpu() != self.core_id();
        wait_flag(&slot.done, reserve && affinity::spinning_useful());
        Ok(slot.out.into_inner().expect("job finished without result"))
    }

    /// Enqueues a migration request; the returned handover is granted once
    /// the executor admits it, and the executor stays parked until released.
    pub(crate) fn request_grant(&self, requester_id: u64, priority: i64) -> Result<Arc<Handover>> {
        let executor = self
            .inner
            .shared
            .executor
            .get()
            .cloned()
            .ok_or(LockError::ShutDown(self.core_id()))?;
        let handover = Arc::new(Handover {
            granted: AtomicBool::new(false),
            released: AtomicBool::new(false),
            waiter: thread::current(),
            executor,
            shared: Arc::clone(&self.inner.shared),
            served: Mutex::new(None),
        });
        self.submit(requester_id, priority, Work::Grant(Arc::clone(&handover)))?;
        Ok(handover)
    }

    pub(crate) fn same_core(&self, other: &SyncCore) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl std::fmt::Debug for SyncCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyncCore")
            .field("core_id", &self.core_id())
            .field("policy", &self.policy())
            .field("state", &self.state())
            .finish()
    }
}

fn shutdown_inner(inner: &Inner, drain: bool) -> Result<()> {
    let shared = &inner.shared;
    {
        let mut q = shared.queue();
        if q.stopping {
            drop(q);
            join_executor(inner);
            return Ok(());
        }
        if !drain && (shared.busy.load(Acquire) || !q.heap.is_empty()) {
            return Err(LockError::Busy(shared.core_id));
        }
        q.stopping = true;
    }
    shared.wakeup.notify_all();
    if let Some(t) = shared.executor.get() {
        t.unpark();
    }
    join_executor(inner);
    Ok(())
}

fn join_executor(inner: &Inner) {
    let handle = inner.join.lock().unwrap_or_else(|e| e.into_inner()).take();
    if let Some(h) = handle {
        let _ = h.join();
        claims().remove(&inner.shared.core_id);
    }
}

fn executor_loop(shared: &Shared) {
    let mut idle_spins = 0u32;
    loop {
        if shared.pending.load(Acquire) == 0 {
            match shared.config.idle {
                IdleMode::Spin => {
                    let spin = affinity::spinning_useful();
                    if spin && idle_spins < SPIN_LIMIT {
                        idle_spins += 1;
                        std::hint::spin_loop();
                        continue;
                    }
                    // Check for shutdown occasionally.
                    idle_spins = 0;
                    if shared.queue().stopping {
                        if shared.pending.load(Acquire) == 0 {
                            return;
                        }
                    } else {
                        if !spin {
                            park_briefly(shared);
                        }
                        continue;
                    }
                }
                IdleMode::Park => {
                    let mut q = shared.queue();
                    shared.idle_parked.store(true, Release);
                    while q.heap.is_empty() && !q.stopping {
                        q = shared.wakeup.wait(q).unwrap_or_else(|e| e.into_inner());
                    }
                    shared.idle_parked.store(false, Release);
                    if q.heap.is_empty() && q.stopping {
                        return;
                    }
                }
            }
        }

        let request = {
            let mut q = shared.queue();
            match q.heap.pop() {
                Some(r) => {
                    shared.busy.store(true, Release);
                    shared.pending.fetch_sub(1, AcqRel);
                    r
                }
                None if q.stopping => return,
                None => continue,
            }
        };
        idle_spins = 0;
        serve(shared, request);
    }
}

/// Idle wait for spin mode on machines where spinning is pointless: yield,
/// and fall back to a short timed sleep on the condvar so we never burn a
/// lone CPU.
fn park_briefly(shared: &Shared) {
    thread::yield_now();
    if shared.pending.load(Acquire) != 0 {
        return;
    }
    let q = shared.queue();
    if !q.heap.is_empty() || q.stopping {
        return;
    }
    shared.idle_parked.store(true, Release);
    let (q, _) = shared
        .wakeup
        .wait_timeout(q, std::time::Duration::from_millis(1))
        .unwrap_or_else(|e| e.into_inner());
    shared.idle_parked.store(false, Release);
    drop(q);
}

fn serve(shared: &Shared, request: CriticalSectionRequest) {
    let CriticalSectionRequest {
        requester_id,
        priority,
        seqno,
        enqueue_time_ns,
        work,
        ..
    } = request;
    let served = Served {
        requester_id,
        priority,
        seqno,
        enqueue_ns: enqueue_time_ns,
        start_ns: monotonic_ns(),
    };
    match work {
        Work::Delegate(job) => unsafe { (job.run)(job.data, &|| shared.complete(&served)) },
        Work::Grant(handover) => {
            *handover.served.lock().unwrap_or_else(|e| e.into_inner()) = Some(served);
            let waiter = handover.waiter.clone();
            handover.granted.store(true, Release);
            waiter.unpark();
            // The migrated thread now runs on this CPU; stay off it.
            while !handover.released.load(Acquire) {
                thread::park();
            }
        }
    }
}

/// Identifier of the calling thread, as stored in request and holder fields.
pub fn current_requester() -> u64 {
    thread_token()
}
