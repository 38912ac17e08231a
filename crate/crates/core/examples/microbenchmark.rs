//! Buffer-walk benchmark for every lock variant, with latency statistics.
//!
//! `cargo run --release --example microbenchmark -- 8K 4K 5000` sets the
//! private size, the shared size and the cycle count.

use mbs::bench::{compute_stats, parse_size, run_benchmark, BenchConfig, Field, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let size = |i: usize| args.get(i).and_then(|s| parse_size(s));
    println!(
        "{:<9} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "variant", "", "min", "p50", "p99", "max", "mean"
    );
    for v in Variant::ALL {
        let mut cfg = BenchConfig::new(v);
        cfg.lambda_bytes = size(0).unwrap_or(cfg.lambda_bytes);
        cfg.sigma_bytes = size(1).unwrap_or(cfg.sigma_bytes);
        cfg.cycles = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
        let out = run_benchmark(&cfg)?;
        for w in out.warnings() {
            eprintln!("{v}: {w}");
        }
        assert!(out.shared_intact(&cfg));
        for (name, field) in [("cycle", Field::Cycle), ("cs", Field::Cs)] {
            let s = compute_stats(&out.steady_samples(), field)?;
            println!(
                "{:<9} {name:>6} {:>9} {:>9} {:>9} {:>9} {:>9.0}",
                v.name(),
                s.min,
                s.p50,
                s.p99,
                s.max,
                s.mean
            );
        }
    }
    Ok(())
}
