//! Simulates one task set under all four protocols and compares responses.

use mbs::analysis::{schedulability_test, Protocol};
use mbs::sim::{generate_taskset, observed_response_times, simulate, SimParams, SimProtocol};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ts = generate_taskset(7, 6, 2, 2, 1.2)?;
    let bound = schedulability_test(&ts, Protocol::MbsConservative)?;
    print!("{:<10}", "task");
    for t in &ts.tasks {
        print!("{:>6}", t.id);
    }
    println!();
    for p in SimProtocol::ALL {
        let tr = simulate(&ts, &SimParams::new(p))?;
        let obs = observed_response_times(&tr);
        print!("{:<10}", p.name());
        for t in &ts.tasks {
            print!(
                "{:>6}",
                obs[&t.id].max.map_or("-".into(), |m| m.to_string())
            );
        }
        println!();
    }
    print!("{:<10}", "bound");
    for t in &ts.tasks {
        print!("{:>6}", bound.get(t.id).unwrap().response_time);
    }
    println!();

    let tr = simulate(&ts, &SimParams::new(SimProtocol::Mbs))?;
    let mut csv = Vec::new();
    tr.write_events_csv(&mut csv)?;
    println!("\nfirst MBS trace events:");
    for line in String::from_utf8(csv)?.lines().take(12) {
        println!("{line}");
    }
    Ok(())
}
