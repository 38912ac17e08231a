//! Lock microbenchmark: each cycle walks a private buffer, then a shared
//! buffer inside a critical section, recording latencies and optional cache
//! counters.

mod buffer;
mod config;
mod counters;
mod run;
mod stats;

pub use buffer::LineBuffer;
pub use config::{l1d_bytes, parse_size, BenchConfig, BenchError, Variant};
pub use counters::{current_tid, CounterError, CounterEvent, ThreadCounter};
pub use run::{
    plan_placement, run_benchmark, write_samples_csv, BenchOutput, CounterStatus, LatencySample,
    Placement, Touch,
};
pub use stats::{compute_stats, percentile, stats_of, Bucket, Field, LatencyStats};
