//! Response-time fixed point for partitioned fixed-priority scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::blocking::{
    Blocking, BlockingBound, MbsConservativeBound, MbsPaperBound, MbsReservedBound, SpinFifoBound,
};
use super::groups::expand_group_locks;
use super::model::{AnalysisError, Result, TaskId, TaskSet, TaskSpec, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResponseTimeResult {
    pub task: TaskId,
    pub response_time: Time,
    pub b_local: Time,
    pub b_remote: Time,
    pub iterations: u32,
    pub schedulable: bool,
}

/// Which blocking analysis to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    /// MBS, one blocking critical section per request.
    MbsPaper,
    /// MBS, every competing job within the response window.
    MbsConservative,
    /// MBS with origin-core reservation (conservative per-request term).
    MbsReserved,
    /// Non-preemptive FIFO spinlocks.
    SpinFifo,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::MbsPaper,
        Protocol::MbsConservative,
        Protocol::MbsReserved,
        Protocol::SpinFifo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::MbsPaper => "mbs-paper",
            Protocol::MbsConservative => "mbs-conservative",
            Protocol::MbsReserved => "mbs-reserved",
            Protocol::SpinFifo => "spin-fifo",
        }
    }

    pub fn bound(self) -> &'static dyn BlockingBound {
        match self {
            Protocol::MbsPaper => &MbsPaperBound,
            Protocol::MbsConservative => &MbsConservativeBound,
            Protocol::MbsReserved => &MbsReservedBound,
            Protocol::SpinFifo => &SpinFifoBound,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| AnalysisError::Invalid(format!("unknown protocol {s:?}")))
    }
}

/// Outcome of [`schedulability_test`]: per-task results, most urgent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleReport {
    pub protocol: Protocol,
    pub results: Vec<ResponseTimeResult>,
    pub schedulable: bool,
}

impl ScheduleReport {
    pub fn get(&self, task: TaskId) -> Option<&ResponseTimeResult> {
        self.results.iter().find(|r| r.task == task)
    }
}

/// How a higher-priority task on the same processor interferes.
#[derive(Debug, Clone, Copy)]
struct Interferer {
    period: Time,
    /// Release jitter: the remote blocking it may push into the window.
    jitter: Time,
    /// Time it occupies the processor per job.
    cost: Time,
}

fn interference(r: Time, hp: &[Interferer]) -> Time {
    hp.iter()
        .map(|h| (r + h.jitter).div_ceil(h.period) * h.cost)
        .sum()
}

fn fixed_point(
    t: &TaskSpec,
    ts: &TaskSet,
    bound: &dyn BlockingBound,
    hp: &[Interferer],
) -> Result<ResponseTimeResult> {
    let e = t.wcet;
    let mut b: Blocking = bound.blocking(t, ts, e.max(1))?;
    let mut r = e + b.total();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let done = |r, b: Blocking, schedulable| ResponseTimeResult {
            task: t.id,
            response_time: r,
            b_local: b.local,
            b_remote: b.remote,
            iterations,
            schedulable,
        };
        if r > t.period {
            // Report blocking over the whole deadline window: where the
            // iteration stopped past it depends on step sizes, and lower
            // priority tasks take this as release jitter.
            if bound.window_dependent() {
                b = bound.blocking(t, ts, t.period)?;
            }
            return Ok(done(r, b, false));
        }
        if bound.window_dependent() {
            b = bound.blocking(t, ts, r)?;
        }
        let next = e + b.total() + interference(r, hp);
        if next == r {
            return Ok(done(r, b, true));
        }
        r = next;
    }
}

/// Solves the response-time recurrence for each task of `ts` on the same
/// processor as `t` down to `t`'s priority; returns all of them keyed by id.
fn solve_processor(
    t: &TaskSpec,
    ts: &TaskSet,
    bound: &dyn BlockingBound,
) -> Result<BTreeMap<TaskId, ResponseTimeResult>> {
    let mut local: Vec<&TaskSpec> = ts
        .tasks
        .iter()
        .filter(|o| o.processor == t.processor && o.priority > t.priority)
        .collect();
    local.sort_by_key(|t| std::cmp::Reverse(t.priority));
    local.push(t);

    let mut out = BTreeMap::new();
    let mut hp: Vec<Interferer> = Vec::new();
    for task in local {
        let res = fixed_point(task, ts, bound, &hp)?;
        let busy = if bound.remote_busy() { res.b_remote } else { 0 };
        hp.push(Interferer {
            period: task.period,
            jitter: res.b_remote,
            cost: task.wcet + busy,
        });
        out.insert(task.id, res);
    }
    Ok(out)
}

/// Least fixed point of
/// `r = e + b_local + b_remote + sum_h ceil((r + b_remote_h) / p_h) * e_h`
/// over higher-priority tasks `h` on the same processor, starting from
/// `e + b_local + b_remote` and stopping once `r` exceeds the period.
///
/// Window-dependent bounds are re-evaluated with the current `r` each step.
/// Bounds whose remote blocking is spent busy on the task's own processor
/// (spinning, or an idle reserved core) add that time to `e_h`.
pub fn response_time(
    t: &TaskSpec,
    ts: &TaskSet,
    bound: &dyn BlockingBound,
) -> Result<ResponseTimeResult> {
    ts.validate_flat()?;
    if ts.task(t.id)? != t {
        return Err(AnalysisError::Invalid(format!(
            "task {} differs from the task set's copy",
            t.id
        )));
    }
    Ok(solve_processor(t, ts, bound)?[&t.id])
}

/// Expands group locks, then bounds every task's response time.
pub fn schedulability_test(ts: &TaskSet, protocol: Protocol) -> Result<ScheduleReport> {
    let ts = expand_group_locks(ts)?;
    ts.validate_flat()?;
    let bound = protocol.bound();

    let mut by_proc: BTreeMap<usize, &TaskSpec> = BTreeMap::new();
    for t in &ts.tasks {
        let lowest = by_proc.entry(t.processor).or_insert(t);
        if t.priority < lowest.priority {
            *lowest = t;
        }
    }
    let mut all = BTreeMap::new();
    for lowest in by_proc.values() {
        all.extend(solve_processor(lowest, &ts, bound)?);
    }

    let results: Vec<ResponseTimeResult> = ts.by_priority().iter().map(|t| all[&t.id]).collect();
    let schedulable = results.iter().all(|r| r.schedulable);
    Ok(ScheduleReport {
        protocol,
        results,
        schedulable,
    })
}

/// Right-hand side of the recurrence evaluated at `r` with the blocking
/// terms of the given results. Used to check returned fixed points.
pub fn recurrence_rhs(
    t: &TaskSpec,
    ts: &TaskSet,
    bound: &dyn BlockingBound,
    r: Time,
    others: &BTreeMap<TaskId, ResponseTimeResult>,
) -> Result<Time> {
    let b = bound.blocking(t, ts, r.max(1))?;
    let hp: Vec<Interferer> = ts
        .tasks
        .iter()
        .filter(|o| o.processor == t.processor && o.priority > t.priority)
        .map(|h| {
            let br = others.get(&h.id).map_or(0, |x| x.b_remote);
            Interferer {
                period: h.period,
                jitter: br,
                cost: h.wcet + if bound.remote_busy() { br } else { 0 },
            }
        })
        .collect();
    Ok(t.wcet + b.total() + interference(r, &hp))
}
