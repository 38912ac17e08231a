//! Task model, blocking bounds and response-time analysis.

mod blocking;
mod groups;
mod model;
mod rta;
mod taskfile;

pub use blocking::{
    blocking_bound_mbs_conservative, blocking_bound_mbs_paper, blocking_bound_mbs_reserved,
    blocking_bound_spin_fifo, Blocking, BlockingBound, MbsConservativeBound, MbsPaperBound,
    MbsReservedBound, SpinFifoBound,
};
pub use groups::expand_group_locks;
pub use model::{AnalysisError, ResourceSpec, Result, Segment, TaskId, TaskSet, TaskSpec, Time};
pub use rta::{
    recurrence_rhs, response_time, schedulability_test, Protocol, ResponseTimeResult,
    ScheduleReport,
};
pub use taskfile::{parse_taskset, to_toml, ParseError};
