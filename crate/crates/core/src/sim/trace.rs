use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::Serialize;

use crate::analysis::{TaskId, Time};

/// Trace event kinds. The declaration order is the tie-break order for
/// simultaneous events of different kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EventKind {
    Release,
    Start,
    Preempt,
    CsEnqueue,
    CsStart,
    CsEnd,
    MigrateOut,
    MigrateBack,
    Finish,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub time: Time,
    pub kind: EventKind,
    pub task: TaskId,
    pub core: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobRecord {
    pub task: TaskId,
    pub release: Time,
    pub finish: Option<Time>,
}

impl JobRecord {
    pub fn response(&self) -> Option<Time> {
        self.finish.map(|f| f - self.release)
    }
}

/// One serviced critical section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsRecord {
    pub task: TaskId,
    /// Index into [`Trace::jobs`].
    pub job: usize,
    pub resource: String,
    /// Core that executed the section.
    pub core: usize,
    pub request: Time,
    pub start: Time,
    /// `None` if the horizon cut the section short.
    pub end: Option<Time>,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreTime {
    pub busy: Time,
    pub idle: Time,
    /// Idle but held for a job away on a synchronization core.
    pub reserved: Time,
}

impl CoreTime {
    pub fn total(&self) -> Time {
        self.busy + self.idle + self.reserved
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub events: Vec<SimEvent>,
    pub jobs: Vec<JobRecord>,
    pub cs: Vec<CsRecord>,
    pub cores: BTreeMap<usize, CoreTime>,
    pub horizon: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObservedResponse {
    /// Largest response over completed jobs.
    pub max: Option<Time>,
    pub completed: usize,
    /// Some job of the task was still pending at the horizon.
    pub unfinished: bool,
}

/// Per-task maximum response time over completed jobs.
pub fn observed_response_times(tr: &Trace) -> BTreeMap<TaskId, ObservedResponse> {
    let mut out: BTreeMap<TaskId, ObservedResponse> = BTreeMap::new();
    for j in &tr.jobs {
        let o = out.entry(j.task).or_default();
        match j.response() {
            Some(r) => {
                o.completed += 1;
                o.max = Some(o.max.map_or(r, |m| m.max(r)));
            }
            None => o.unfinished = true,
        }
    }
    out
}

impl Trace {
    /// `(resource, task)` in the order critical sections started; sections
    /// starting at the same instant are ordered by resource, then task.
    pub fn cs_sequence(&self) -> Vec<(String, TaskId)> {
        let mut v: Vec<&CsRecord> = self.cs.iter().collect();
        v.sort_by(|a, b| (a.start, &a.resource, a.task).cmp(&(b.start, &b.resource, b.task)));
        v.into_iter()
            .map(|c| (c.resource.clone(), c.task))
            .collect()
    }

    /// Miss count over all sections except the first `skip` on each resource.
    pub fn steady_state_misses(&self, skip: usize) -> u64 {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        self.cs
            .iter()
            .filter(|c| {
                let n = seen.entry(c.resource.as_str()).or_default();
                *n += 1;
                *n > skip
            })
            .map(|c| c.misses)
            .sum()
    }

    pub fn write_events_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.events {
            out.serialize(e)?;
        }
        if self.events.is_empty() {
            out.write_record(["time", "kind", "task", "core"])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One row of the summary export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub task: TaskId,
    pub max_response: Option<Time>,
    pub analyzed_bound_paper: Time,
    pub analyzed_bound_conservative: Time,
}

pub fn write_summary_csv<W: io::Write>(rows: &[SummaryRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record([
            "task",
            "max_response",
            "analyzed_bound_paper",
            "analyzed_bound_conservative",
        ])?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
