//! Origin-core reservation for MBS+R under affinity migration.
//!
//! Each application thread owns a lazily spawned helper. While the thread's
//! critical section runs on a synchronization core, the helper is pinned to
//! the origin core and spins there, so no other application thread gets it.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::affinity;

const IDLE: usize = usize::MAX;

struct Control {
    target: AtomicUsize,
    spinning: AtomicBool,
    stop: AtomicBool,
}

struct Reserver {
    ctl: Arc<Control>,
    handle: Option<JoinHandle<()>>,
}

impl Reserver {
    fn spawn() -> Option<Self> {
        let ctl = Arc::new(Control {
            target: AtomicUsize::new(IDLE),
            spinning: AtomicBool::new(false),
            stop: AtomicBool::new(false),
        });
        let c = Arc::clone(&ctl);
        let handle = thread::Builder::new()
            .name("mbs-reserve".into())
            .spawn(move || run(&c))
            .ok()?;
        Some(Reserver {
            ctl,
            handle: Some(handle),
        })
    }
}

fn run(ctl: &Control) {
    let mut pinned = IDLE;
    loop {
        if ctl.stop.load(Ordering::Acquire) {
            return;
        }
        let target = ctl.target.load(Ordering::Acquire);
        if target == IDLE {
            thread::park();
            continue;
        }
        if pinned != target && affinity::pin_current_thread(target).is_ok() {
            pinned = target;
        }
        ctl.spinning.store(true, Ordering::Release);
        while ctl.target.load(Ordering::Acquire) == target {
            std::hint::spin_loop();
        }
        ctl.spinning.store(false, Ordering::Release);
    }
}

impl Drop for Reserver {
    fn drop(&mut self) {
        self.ctl.stop.store(true, Ordering::Release);
        self.ctl.target.store(IDLE, Ordering::Release);
        if let Some(h) = self.handle.take() {
            h.thread().unpark();
            let _ = h.join();
        }
    }
}

thread_local! {
    static RESERVER: std::cell::RefCell<Option<Reserver>> = const { std::cell::RefCell::new(None) };
}

/// An active reservation of one core; released on drop.
pub(crate) struct Reservation {
    ctl: Option<Arc<Control>>,
}

impl Reservation {
    pub(crate) fn hold(core: usize) -> Self {
        let ctl = RESERVER.with(|r| {
            let mut r = r.borrow_mut();
            if r.is_none() {
                *r = Reserver::spawn();
            }
            r.as_ref().map(|r| {
                r.ctl.target.store(core, Ordering::Release);
                if let Some(h) = &r.handle {
                    h.thread().unpark();
                }
                Arc::clone(&r.ctl)
            })
        });
        if let Some(c) = &ctl {
            while !c.spinning.load(Ordering::Acquire) && !c.stop.load(Ordering::Acquire) {
                thread::yield_now();
            }
        }
        Reservation { ctl }
    }
}

impl Drop for Reservation {
    fn drop(&mut self) {
        if let Some(c) = &self.ctl {
            c.target.store(IDLE, Ordering::Release);
            while c.spinning.load(Ordering::Acquire) {
                std::hint::spin_loop();
            }
        }
    }
}
