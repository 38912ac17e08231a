//! The ticket spinlock and FIFO mutex used for comparison.

use std::thread;
use std::time::Instant;

use mbs::runtime::{BaselineKind, BaselineLock, CriticalSection};

fn hammer<L: CriticalSection<u64>>(lock: &L) -> u64 {
    thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                for _ in 0..50_000 {
                    lock.critical(0, |c: &mut u64| *c += 1).unwrap();
                }
            });
        }
    });
    lock.critical(0, |c: &mut u64| *c).unwrap()
}

fn main() {
    for kind in [BaselineKind::Spinlock, BaselineKind::Mutex] {
        let start = Instant::now();
        let lock = BaselineLock::new(kind, 0u64);
        let total = hammer(&lock);
        println!("{kind:?}: {total} increments in {:?}", start.elapsed());
    }
}
