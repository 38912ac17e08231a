use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;

use mbs::runtime::affinity;
use mbs::runtime::{
    AdmissionPolicy, CoreState, ErrorKind, IdleMode, LockError, MbsMutex, Migration, SyncCore,
    SyncCoreConfig,
};

// Core claims are process-wide and the test machine may have a single CPU.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn sync_cpu() -> usize {
    *affinity::allowed_cpus().last().unwrap()
}

fn core(policy: AdmissionPolicy) -> SyncCore {
    SyncCore::with_config(
        sync_cpu(),
        SyncCoreConfig {
            policy,
            idle: IdleMode::Spin,
            record_service: true,
        },
    )
    .unwrap()
}

#[test]
fn construction_contract() {
    let _s = serial();
    let h = SyncCore::new(sync_cpu(), AdmissionPolicy::Priority).unwrap();
    assert_eq!(h.state(), CoreState::Running);
    assert_eq!(h.queued(), 0);
    assert_eq!(h.core_id(), sync_cpu());
    assert!(h.executor_tid() > 0);
}

#[test]
fn out_of_range_core_is_configuration_error() {
    let err = SyncCore::new(10_000, AdmissionPolicy::Fifo).unwrap_err();
    assert!(matches!(
        err,
        LockError::CoreOutOfRange { core: 10_000, .. }
    ));
    assert_eq!(err.kind(), ErrorKind::Configuration);
}

#[test]
fn duplicate_claim_is_usage_error() {
    let _s = serial();
    let _h = SyncCore::new(sync_cpu(), AdmissionPolicy::Priority).unwrap();
    let err = SyncCore::new(sync_cpu(), AdmissionPolicy::Priority).unwrap_err();
    assert!(matches!(err, LockError::CoreClaimed(_)));
    assert_eq!(err.kind(), ErrorKind::Usage);
}

#[test]
fn claim_released_after_shutdown() {
    let _s = serial();
    let h = SyncCore::new(sync_cpu(), AdmissionPolicy::Priority).unwrap();
    h.shutdown(false).unwrap();
    let again = SyncCore::new(sync_cpu(), AdmissionPolicy::Priority).unwrap();
    drop(again);
    drop(h);
}

#[test]
fn new_mutexes_are_unheld() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = MbsMutex::new(&h, false, ()).unwrap();
    assert!(m.holder().is_none());
    assert!(!m.reservation());
    let r = MbsMutex::new(&h, true, ()).unwrap();
    assert!(r.holder().is_none());
    assert!(r.reservation());
}

#[test]
fn mutex_on_shut_down_core_is_rejected() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    h.shutdown(false).unwrap();
    assert_eq!(h.state(), CoreState::ShutDown);
    let err = MbsMutex::new(&h, false, ()).unwrap_err();
    assert!(matches!(err, LockError::ShutDown(_)));
}

#[test]
fn critical_returns_value_and_runs_on_sync_core() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = MbsMutex::new(&h, false, ()).unwrap();
    assert_eq!(m.critical(0, |_| 7).unwrap(), 7);
    assert_eq!(
        m.critical(0, |_| affinity::current_cpu()).unwrap(),
        h.core_id()
    );
    assert!(m.holder().is_none());
}

#[test]
fn holder_is_set_only_inside_critical_section() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = Arc::new(MbsMutex::new(&h, false, ()).unwrap());
    let m2 = Arc::clone(&m);
    let inside = m.critical(0, move |_| m2.holder()).unwrap();
    assert_eq!(inside, Some(mbs::runtime::current_requester()));
    assert!(m.holder().is_none());
}

#[test]
fn lock_migrates_calling_thread() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = MbsMutex::new(&h, false, 0u32).unwrap();
    let origin = affinity::allowed_cpus()[0];
    let m = Arc::new(m);
    let m2 = Arc::clone(&m);
    thread::spawn(move || {
        affinity::pin_current_thread(origin).unwrap();
        let mut g = m2.lock(0).unwrap();
        assert_eq!(affinity::current_cpu(), m2.sync_core().core_id());
        *g += 1;
        g.unlock().unwrap();
    })
    .join()
    .unwrap();
    assert_eq!(*m.lock(0).unwrap(), 1);
}

#[test]
fn reservation_resumes_on_origin() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = Arc::new(MbsMutex::new(&h, true, ()).unwrap());
    for origin in affinity::allowed_cpus() {
        let m = Arc::clone(&m);
        thread::spawn(move || {
            affinity::pin_current_thread(origin).unwrap();
            for _ in 0..50 {
                let before = affinity::current_cpu();
                let g = m.lock(3).unwrap();
                assert_eq!(affinity::current_cpu(), m.sync_core().core_id());
                g.unlock().unwrap();
                assert_eq!(affinity::current_cpu(), before);
            }
        })
        .join()
        .unwrap();
    }
}

#[test]
fn unlock_by_non_holder_is_usage_error() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = Arc::new(MbsMutex::new(&h, false, ()).unwrap());
    assert!(matches!(m.raw_unlock(), Err(LockError::NotHolder)));

    m.raw_lock(0).unwrap();
    let m2 = Arc::clone(&m);
    let r = thread::spawn(move || m2.raw_unlock()).join().unwrap();
    assert!(matches!(r, Err(LockError::NotHolder)));
    m.raw_unlock().unwrap();
}

#[test]
fn relock_by_holder_is_rejected() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = MbsMutex::new(&h, false, ()).unwrap();
    let g = m.lock(0).unwrap();
    assert!(matches!(m.lock(0), Err(LockError::AlreadyHeld)));
    assert!(matches!(m.critical(0, |_| ()), Err(LockError::AlreadyHeld)));
    drop(g);
    m.critical(0, |_| ()).unwrap();
}

#[test]
fn nesting_on_same_core_is_rejected_not_deadlocked() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let outer = Arc::new(MbsMutex::new(&h, false, ()).unwrap());
    let inner = Arc::new(MbsMutex::new(&h, false, ()).unwrap());
    let i2 = Arc::clone(&inner);
    let nested = outer.critical(0, move |_| i2.critical(0, |_| ())).unwrap();
    assert!(matches!(nested, Err(LockError::NestingOrder { .. })));

    let g = outer.lock(0).unwrap();
    assert!(matches!(inner.lock(0), Err(LockError::NestingOrder { .. })));
    drop(g);
}

fn counter_run(m: Arc<MbsMutex<u64>>, threads: usize, iters: usize) -> u64 {
    let hs: Vec<_> = (0..threads)
        .map(|_| {
            let m = Arc::clone(&m);
            thread::spawn(move || {
                for _ in 0..iters {
                    m.critical(0, |c| *c += 1).unwrap();
                }
            })
        })
        .collect();
    for h in hs {
        h.join().unwrap();
    }
    Arc::try_unwrap(m).unwrap().into_inner()
}

#[test]
fn counter_is_exact_for_every_mechanism() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    for reservation in [false, true] {
        for migration in [Migration::Delegate, Migration::Affinity] {
            let iters = if migration == Migration::Affinity {
                1_000
            } else {
                10_000
            };
            let m = MbsMutex::new(&h, reservation, 0u64)
                .unwrap()
                .with_migration(migration);
            let total = counter_run(Arc::new(m), 4, iters);
            assert_eq!(
                total,
                4 * iters as u64,
                "{migration:?} reservation={reservation}"
            );
        }
    }
}

#[test]
fn concurrent_appends_are_never_torn() {
    let _s = serial();
    let h = core(AdmissionPolicy::Fifo);
    let m = Arc::new(MbsMutex::new(&h, false, Vec::<(usize, usize)>::new()).unwrap());
    let hs: Vec<_> = (0..8)
        .map(|t| {
            let m = Arc::clone(&m);
            thread::spawn(move || {
                for i in 0..250 {
                    m.critical(0, move |v| v.push((t, i))).unwrap();
                }
            })
        })
        .collect();
    for h in hs {
        h.join().unwrap();
    }
    let mut v = Arc::try_unwrap(m).unwrap().into_inner();
    assert_eq!(v.len(), 2000);
    v.sort();
    v.dedup();
    assert_eq!(v.len(), 2000);
}

/// Blocks the executor, stages one request per priority in order, then
/// releases the gate and returns the service order.
pub fn staged_order(policy: AdmissionPolicy, prios: &[i64]) -> Vec<i64> {
    let h = core(policy);
    let m = Arc::new(MbsMutex::new(&h, false, Vec::new()).unwrap());
    let open = Arc::new(AtomicBool::new(false));
    let gate = {
        let (m, open) = (Arc::clone(&m), Arc::clone(&open));
        thread::spawn(move || {
            m.critical(i64::MAX, move |_| {
                while !open.load(Ordering::Acquire) {
                    thread::yield_now();
                }
            })
            .unwrap()
        })
    };
    while !h.is_busy() {
        thread::yield_now();
    }
    let mut hs = Vec::new();
    for (i, &p) in prios.iter().enumerate() {
        let m = Arc::clone(&m);
        hs.push(thread::spawn(move || {
            m.critical(p, move |v| v.push(p)).unwrap()
        }));
        while h.queued() < i + 1 {
            thread::yield_now();
        }
    }
    open.store(true, Ordering::Release);
    gate.join().unwrap();
    for t in hs {
        t.join().unwrap();
    }
    Arc::try_unwrap(m).unwrap().into_inner()
}

#[test]
fn admission_order_priority_and_fifo() {
    let _s = serial();
    assert_eq!(
        staged_order(AdmissionPolicy::Priority, &[1, 5, 3]),
        vec![5, 3, 1]
    );
    assert_eq!(
        staged_order(AdmissionPolicy::Fifo, &[1, 5, 3]),
        vec![1, 5, 3]
    );
    // Equal priorities fall back to arrival order.
    assert_eq!(
        staged_order(AdmissionPolicy::Priority, &[2, 7, 2, 7]),
        vec![7, 7, 2, 2]
    );
}

#[test]
fn service_log_shows_non_overlapping_run_to_completion() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = Arc::new(MbsMutex::new(&h, false, 0u64).unwrap());
    assert_eq!(counter_run(m, 3, 500), 1500);
    let log = h.service_log();
    assert_eq!(log.len(), 1500);
    let mut seqnos: Vec<_> = log.iter().map(|r| r.seqno).collect();
    seqnos.sort();
    seqnos.dedup();
    assert_eq!(seqnos.len(), log.len());
    for w in log.windows(2) {
        assert!(w[0].end_ns <= w[1].start_ns);
        assert!(w[0].start_ns <= w[0].end_ns);
    }
    for r in &log {
        assert!(r.enqueue_ns <= r.start_ns);
    }
}

#[test]
fn guard_intervals_are_disjoint() {
    let _s = serial();
    let h = core(AdmissionPolicy::Fifo);
    let m = Arc::new(MbsMutex::new(&h, false, Vec::<(u64, u64)>::new()).unwrap());
    let hs: Vec<_> = (0..4)
        .map(|_| {
            let m = Arc::clone(&m);
            thread::spawn(move || {
                for _ in 0..200 {
                    let mut g = m.lock(1).unwrap();
                    let a = mbs::runtime::monotonic_ns();
                    std::hint::black_box(&mut *g);
                    let b = mbs::runtime::monotonic_ns();
                    g.push((a, b));
                }
            })
        })
        .collect();
    for t in hs {
        t.join().unwrap();
    }
    let mut iv = Arc::try_unwrap(m).unwrap().into_inner();
    iv.sort();
    assert_eq!(iv.len(), 800);
    for w in iv.windows(2) {
        assert!(w[0].1 <= w[1].0, "overlap {:?}", w);
    }
}

#[test]
fn panic_inside_critical_poisons() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = MbsMutex::new(&h, false, 0u32).unwrap();
    let err = m.critical(0, |_| -> u32 { panic!("boom") }).unwrap_err();
    match err {
        LockError::Poisoned(msg) => assert_eq!(msg, "boom"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(m.is_poisoned());
    assert!(m.holder().is_none());
    assert!(matches!(m.critical(0, |_| 1), Err(LockError::Poisoned(_))));
    assert!(matches!(m.lock(0), Err(LockError::Poisoned(_))));
    // The executor itself survives.
    let other = MbsMutex::new(&h, false, ()).unwrap();
    other.critical(0, |_| ()).unwrap();
}

#[test]
fn shutdown_semantics() {
    let _s = serial();
    let h = core(AdmissionPolicy::Priority);
    let m = MbsMutex::new(&h, false, ()).unwrap();
    let g = m.lock(0).unwrap();
    assert!(matches!(h.shutdown(false), Err(LockError::Busy(_))));
    drop(g);
    h.shutdown(false).unwrap();
    assert_eq!(h.state(), CoreState::ShutDown);
    assert!(matches!(m.critical(0, |_| ()), Err(LockError::ShutDown(_))));
    assert!(matches!(m.lock(0), Err(LockError::ShutDown(_))));
}

#[test]
fn drain_serves_queued_requests() {
    let _s = serial();
    let h = core(AdmissionPolicy::Fifo);
    let m = Arc::new(MbsMutex::new(&h, false, ()).unwrap());
    let served = Arc::new(AtomicU64::new(0));
    let open = Arc::new(AtomicBool::new(false));
    let gate = {
        let (m, open) = (Arc::clone(&m), Arc::clone(&open));
        thread::spawn(move || {
            m.critical(0, move |_| {
                while !open.load(Ordering::Acquire) {
                    thread::yield_now();
                }
            })
        })
    };
    while !h.is_busy() {
        thread::yield_now();
    }
    let mut hs = Vec::new();
    for i in 0..5 {
        let (m, served) = (Arc::clone(&m), Arc::clone(&served));
        hs.push(thread::spawn(move || {
            m.critical(0, move |_| served.fetch_add(1, Ordering::AcqRel))
                .unwrap();
        }));
        while h.queued() < i + 1 {
            thread::yield_now();
        }
    }
    assert!(matches!(h.shutdown(false), Err(LockError::Busy(_))));
    let h2 = h.clone();
    let stopper = thread::spawn(move || h2.shutdown(true));
    while h.state() != CoreState::ShutDown {
        thread::yield_now();
    }
    open.store(true, Ordering::Release);
    stopper.join().unwrap().unwrap();
    gate.join().unwrap().unwrap();
    for t in hs {
        t.join().unwrap();
    }
    assert_eq!(served.load(Ordering::Acquire), 5);
    assert_eq!(h.served(), 6);
}

#[test]
fn park_idle_mode_serves_requests() {
    let _s = serial();
    let h = SyncCore::with_config(
        sync_cpu(),
        SyncCoreConfig {
            policy: AdmissionPolicy::Priority,
            idle: IdleMode::Park,
            record_service: false,
        },
    )
    .unwrap();
    let m = Arc::new(MbsMutex::new(&h, false, 0u64).unwrap());
    thread::sleep(std::time::Duration::from_millis(5));
    assert_eq!(counter_run(m, 2, 2_000), 4_000);
}
