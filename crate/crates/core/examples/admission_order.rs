//! Queued requests are served by priority or by arrival, depending on the policy.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use mbs::runtime::{default_sync_core, AdmissionPolicy, MbsMutex, SyncCore};

fn served_order(policy: AdmissionPolicy) -> Vec<i64> {
    let core = SyncCore::new(default_sync_core().unwrap(), policy).unwrap();
    let log = MbsMutex::new(&core, false, Vec::new()).unwrap();
    let open = AtomicBool::new(false);
    thread::scope(|s| {
        // Hold the executor so the next requests queue up.
        s.spawn(|| {
            log.critical(i64::MAX, |_| {
                while !open.load(Ordering::Acquire) {
                    thread::yield_now();
                }
            })
            .unwrap()
        });
        while !core.is_busy() {
            thread::yield_now();
        }
        for (i, prio) in [1, 5, 3].into_iter().enumerate() {
            let log = &log;
            s.spawn(move || log.critical(prio, move |v| v.push(prio)).unwrap());
            while core.queued() < i + 1 {
                thread::yield_now();
            }
        }
        open.store(true, Ordering::Release);
    });
    log.into_inner()
}

fn main() {
    for policy in [AdmissionPolicy::Priority, AdmissionPolicy::Fifo] {
        println!(
            "{policy:?}: requests 1, 5, 3 served as {:?}",
            served_order(policy)
        );
    }
}
