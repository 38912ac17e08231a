//! A shared counter whose critical sections run on a dedicated core.

use std::sync::Arc;
use std::thread;

use mbs::runtime::affinity::current_cpu;
use mbs::runtime::{default_sync_core, AdmissionPolicy, MbsMutex, SyncCore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // MBS_SYNC_CORES picks the core; otherwise the last allowed CPU.
    let core = SyncCore::new(default_sync_core()?, AdmissionPolicy::Priority)?;
    let counter = Arc::new(MbsMutex::new(&core, false, 0u64)?);

    let workers: Vec<_> = (0..4)
        .map(|_| {
            let counter = Arc::clone(&counter);
            thread::spawn(move || {
                for _ in 0..10_000 {
                    counter.critical(0, |c| *c += 1).unwrap();
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }

    let (total, cpu) = counter.critical(0, |c| (*c, current_cpu()))?;
    println!(
        "total {total}, computed on CPU {cpu} (sync core {})",
        core.core_id()
    );
    println!("requests served: {}", core.served());
    Ok(())
}
