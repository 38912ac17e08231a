//! Random task sets: simulated MBS against its analysis, and against spinlocks.

use mbs::analysis::to_toml;
use mbs::runtime::AdmissionPolicy;
use mbs::sim::{fuzz_taskset, minimize, soundness_fuzz, worse_than_spin, FuzzConfig};

fn main() {
    let cfg = FuzzConfig {
        sets: 300,
        ..FuzzConfig::default()
    };
    let rep = soundness_fuzz(&cfg);
    println!(
        "{} schedulable sets checked, {} exceed the conservative bound, {} the per-request bound",
        rep.checked,
        rep.violations.len(),
        rep.paper_exceedances.len()
    );

    // Freeing the origin core can let a lower-priority task grab a lock first.
    let slower = (0..cfg.sets as u64)
        .map(|s| {
            let mut ts = fuzz_taskset(s, &cfg);
            ts.delta = 0;
            ts
        })
        .find(|ts| {
            !worse_than_spin(ts, AdmissionPolicy::Fifo)
                .unwrap()
                .is_empty()
        });
    if let Some(ts) = slower {
        let small = minimize(&ts, |t| {
            worse_than_spin(t, AdmissionPolicy::Fifo).is_ok_and(|v| !v.is_empty())
        });
        println!(
            "slower than spinning, (task, migrating, spinning) = {:?}:\n{}",
            worse_than_spin(&small, AdmissionPolicy::Fifo).unwrap(),
            to_toml(&small)
        );
    }
}
