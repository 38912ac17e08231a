//! Discrete-event simulation of partitioned fixed-priority scheduling with
//! migration-based and lock-based synchronization.

mod cache;
mod engine;
mod fuzz;
mod generate;
mod params;
mod trace;

pub use cache::{Access, CacheState, Line};
pub use engine::simulate;
pub use fuzz::{
    fuzz_taskset, minimize, same_cs_sequence, soundness_fuzz, summary_rows, worse_than_spin,
    worst_responses, Finding, FuzzConfig, FuzzReport,
};
pub use generate::{generate_taskset, PERIODS};
pub use params::{CacheModel, SimError, SimParams, SimProtocol, SimResult};
pub use trace::{
    observed_response_times, write_summary_csv, CoreTime, CsRecord, EventKind, JobRecord,
    ObservedResponse, SimEvent, SummaryRow, Trace,
};
