//! Lock/unlock with thread migration, with and without reserving the origin core.

use std::thread;

use mbs::runtime::affinity::{allowed_cpus, current_cpu, pin_current_thread};
use mbs::runtime::{default_sync_core, AdmissionPolicy, MbsMutex, Migration, SyncCore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let core = SyncCore::new(default_sync_core()?, AdmissionPolicy::Priority)?;
    let origin = allowed_cpus()[0];

    for reservation in [false, true] {
        let m = MbsMutex::new(&core, reservation, Vec::<usize>::new())?
            .with_migration(Migration::Affinity);
        thread::scope(|s| {
            s.spawn(|| {
                pin_current_thread(origin).unwrap();
                let mut g = m.lock(1).unwrap();
                g.push(current_cpu());
                g.unlock().unwrap();
                let resumed = current_cpu();
                let inside = m.critical(1, |v| v.clone()).unwrap();
                println!(
                    "reservation={reservation}: origin {origin}, section ran on {inside:?}, resumed on {resumed}"
                );
            });
        });
    }
    Ok(())
}
