//! Blocking bounds for migration-based and lock-based protocols.
//!
//! Contention for MBS is resolved per synchronization core: a request waits
//! for critical sections of every resource served by the same core. With one
//! resource per core this is exactly "the other users of the resource".

use super::model::{AnalysisError, Result, TaskSet, TaskSpec, Time};

/// Priority-inversion blocking of one job: `local` from tasks on the same
/// processor, `remote` from everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Blocking {
    pub local: Time,
    pub remote: Time,
}

impl Blocking {
    pub fn total(&self) -> Time {
        self.local + self.remote
    }
}

/// A blocking-bound function usable by the response-time iteration.
pub trait BlockingBound {
    /// Bound for `task` when its response time is at most `window`.
    fn blocking(&self, task: &TaskSpec, ts: &TaskSet, window: Time) -> Result<Blocking>;

    /// Whether the bound changes with `window`.
    fn window_dependent(&self) -> bool {
        false
    }

    /// Whether remote blocking keeps the task's own processor occupied, so
    /// that lower-priority tasks there see it as execution.
    fn remote_busy(&self) -> bool {
        false
    }
}

fn core_of(ts: &TaskSet, task: &TaskSpec, resource: &str) -> Result<usize> {
    ts.sync_core_of(resource)
        .ok_or_else(|| AnalysisError::UnknownResource {
            task: task.id,
            resource: resource.to_string(),
        })
}

/// Longest critical section `other` issues on synchronization core `core`.
fn longest_on_core(ts: &TaskSet, other: &TaskSpec, core: usize) -> Option<Time> {
    other.longest_cs_on(|r| ts.sync_core_of(r) == Some(core))
}

/// Each critical section waits for at most one other critical section: the
/// longest one any other task issues on the same synchronization core. Both
/// migrations add `delta`.
pub fn blocking_bound_mbs_paper(task: &TaskSpec, ts: &TaskSet) -> Result<Blocking> {
    let mut remote = 0;
    for (resource, _) in task.critical_sections() {
        let core = core_of(ts, task, resource)?;
        let longest = ts
            .tasks
            .iter()
            .filter(|o| o.id != task.id)
            .filter_map(|o| longest_on_core(ts, o, core))
            .max()
            .unwrap_or(0);
        remote += longest + 2 * ts.delta;
    }
    Ok(Blocking { local: 0, remote })
}

/// Each critical section may wait for every job of every other task on the
/// same synchronization core released within `window`, each contributing its
/// longest critical section there.
pub fn blocking_bound_mbs_conservative(
    task: &TaskSpec,
    ts: &TaskSet,
    window: Time,
) -> Result<Blocking> {
    if window == 0 {
        return Err(AnalysisError::ZeroWindow);
    }
    let mut remote = 0;
    for (resource, _) in task.critical_sections() {
        let core = core_of(ts, task, resource)?;
        remote += conservative_delay(ts, task, core, window) + 2 * ts.delta;
    }
    Ok(Blocking { local: 0, remote })
}

fn conservative_delay(ts: &TaskSet, task: &TaskSpec, core: usize, window: Time) -> Time {
    ts.tasks
        .iter()
        .filter(|o| o.id != task.id)
        .filter_map(|o| longest_on_core(ts, o, core).map(|l| window.div_ceil(o.period) * l))
        .sum()
}

/// MBS with a reserved origin core. Remote blocking is the conservative MBS
/// term. While a lower-priority task on the same processor is away in a
/// critical section its reservation keeps this task off the processor, so
/// `local` is the longest such absence: one request's waiting (bounded with
/// that task's period as the window), its migrations and its section.
pub fn blocking_bound_mbs_reserved(
    task: &TaskSpec,
    ts: &TaskSet,
    window: Time,
) -> Result<Blocking> {
    let remote = blocking_bound_mbs_conservative(task, ts, window)?.remote;
    let mut local = 0;
    for o in ts
        .tasks
        .iter()
        .filter(|o| o.processor == task.processor && o.priority < task.priority)
    {
        for (resource, len) in o.critical_sections() {
            let core = core_of(ts, o, resource)?;
            let away = conservative_delay(ts, o, core, o.period) + 2 * ts.delta + len;
            local = local.max(away);
        }
    }
    Ok(Blocking { local, remote })
}

/// Non-preemptive FIFO spinlocks: per request, one critical section from each
/// other processor; once per job, the longest critical section of a local
/// lower-priority task.
pub fn blocking_bound_spin_fifo(task: &TaskSpec, ts: &TaskSet) -> Result<Blocking> {
    let mut remote = 0;
    for (resource, _) in task.critical_sections() {
        core_of(ts, task, resource)?;
        let mut per_proc: std::collections::BTreeMap<usize, Time> = Default::default();
        for o in ts.tasks.iter().filter(|o| o.processor != task.processor) {
            if let Some(l) = o.longest_cs_on(|r| r == resource) {
                let e = per_proc.entry(o.processor).or_default();
                *e = (*e).max(l);
            }
        }
        remote += per_proc.values().sum::<Time>();
    }
    let local = ts
        .tasks
        .iter()
        .filter(|o| o.processor == task.processor && o.priority < task.priority)
        .filter_map(|o| o.longest_cs_on(|_| true))
        .max()
        .unwrap_or(0);
    Ok(Blocking { local, remote })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MbsPaperBound;

#[derive(Debug, Clone, Copy, Default)]
pub struct MbsConservativeBound;

#[derive(Debug, Clone, Copy, Default)]
pub struct MbsReservedBound;

#[derive(Debug, Clone, Copy, Default)]
pub struct SpinFifoBound;

impl BlockingBound for MbsPaperBound {
    fn blocking(&self, task: &TaskSpec, ts: &TaskSet, _window: Time) -> Result<Blocking> {
        blocking_bound_mbs_paper(task, ts)
    }
}

impl BlockingBound for MbsConservativeBound {
    fn blocking(&self, task: &TaskSpec, ts: &TaskSet, window: Time) -> Result<Blocking> {
        blocking_bound_mbs_conservative(task, ts, window)
    }

    fn window_dependent(&self) -> bool {
        true
    }
}

impl BlockingBound for MbsReservedBound {
    fn blocking(&self, task: &TaskSpec, ts: &TaskSet, window: Time) -> Result<Blocking> {
        blocking_bound_mbs_reserved(task, ts, window)
    }

    fn window_dependent(&self) -> bool {
        true
    }

    fn remote_busy(&self) -> bool {
        true
    }
}

impl BlockingBound for SpinFifoBound {
    fn blocking(&self, task: &TaskSpec, ts: &TaskSet, _window: Time) -> Result<Blocking> {
        blocking_bound_spin_fifo(task, ts)
    }

    fn remote_busy(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::model::{ResourceSpec, Segment};

    fn task(id: u32, prio: i64, proc_: usize, period: Time, segs: Vec<Segment>) -> TaskSpec {
        TaskSpec {
            id,
            period,
            wcet: segs.iter().map(Segment::length).sum(),
            priority: prio,
            processor: proc_,
            segments: segs,
        }
    }

    fn r(id: &str, core: usize) -> ResourceSpec {
        ResourceSpec {
            id: id.into(),
            sync_core: core,
            group: None,
        }
    }

    fn three_users(delta: Time) -> TaskSet {
        TaskSet::new(
            vec![
                task(1, 3, 0, 100, vec![Segment::exec(2), Segment::cs("R", 2)]),
                task(2, 2, 1, 100, vec![Segment::cs("R", 3)]),
                task(3, 1, 2, 100, vec![Segment::cs("R", 5), Segment::exec(1)]),
            ],
            vec![r("R", 9)],
            delta,
        )
    }

    #[test]
    fn paper_bound_takes_longest_competitor() {
        let ts = three_users(0);
        let b = blocking_bound_mbs_paper(&ts.tasks[0], &ts).unwrap();
        assert_eq!(
            b,
            Blocking {
                local: 0,
                remote: 5
            }
        );
        let ts = three_users(4);
        let b = blocking_bound_mbs_paper(&ts.tasks[0], &ts).unwrap();
        assert_eq!(b.remote, 5 + 8);
    }

    #[test]
    fn paper_bound_without_cs_or_competitors() {
        let ts = TaskSet::new(
            vec![
                task(1, 2, 0, 10, vec![Segment::exec(3)]),
                task(2, 1, 1, 10, vec![Segment::cs("R", 2)]),
            ],
            vec![r("R", 5)],
            3,
        );
        assert_eq!(
            blocking_bound_mbs_paper(&ts.tasks[0], &ts).unwrap(),
            Blocking::default()
        );
        // Only user of R: migrations only.
        assert_eq!(
            blocking_bound_mbs_paper(&ts.tasks[1], &ts).unwrap().remote,
            6
        );
    }

    #[test]
    fn conservative_counts_jobs_in_window() {
        let ts = TaskSet::new(
            vec![
                task(1, 2, 0, 50, vec![Segment::cs("R", 1)]),
                task(2, 1, 1, 10, vec![Segment::cs("R", 5)]),
                task(3, 0, 1, 20, vec![Segment::cs("R", 3)]),
            ],
            vec![r("R", 5)],
            1,
        );
        // window <= every period: one job each
        let b = blocking_bound_mbs_conservative(&ts.tasks[0], &ts, 10).unwrap();
        assert_eq!(b.remote, 5 + 3 + 2);
        // window = 2 periods of task 3 -> two of its sections
        let b = blocking_bound_mbs_conservative(&ts.tasks[0], &ts, 40).unwrap();
        assert_eq!(b.remote, 4 * 5 + 2 * 3 + 2);
        assert_eq!(
            blocking_bound_mbs_conservative(&ts.tasks[0], &ts, 0),
            Err(AnalysisError::ZeroWindow)
        );
    }

    #[test]
    fn spin_fifo_one_per_other_processor() {
        let ts = TaskSet::new(
            vec![
                task(1, 3, 0, 100, vec![Segment::cs("R", 2)]),
                task(2, 2, 1, 100, vec![Segment::cs("R", 4)]),
                task(3, 1, 1, 100, vec![Segment::cs("R", 1)]),
            ],
            vec![r("R", 9)],
            0,
        );
        let b = blocking_bound_spin_fifo(&ts.tasks[0], &ts).unwrap();
        assert_eq!(
            b,
            Blocking {
                local: 0,
                remote: 4
            }
        );
        // task 2 has a lower-priority neighbour with a 1-tick section
        let b = blocking_bound_spin_fifo(&ts.tasks[1], &ts).unwrap();
        assert_eq!(
            b,
            Blocking {
                local: 1,
                remote: 2
            }
        );
    }

    #[test]
    fn spin_fifo_uniprocessor_has_no_remote_blocking() {
        let ts = TaskSet::new(
            vec![
                task(1, 2, 0, 100, vec![Segment::cs("R", 2)]),
                task(2, 1, 0, 100, vec![Segment::cs("R", 4)]),
            ],
            vec![r("R", 9)],
            0,
        );
        assert_eq!(
            blocking_bound_spin_fifo(&ts.tasks[0], &ts).unwrap(),
            Blocking {
                local: 4,
                remote: 0
            }
        );
        assert_eq!(
            blocking_bound_spin_fifo(&ts.tasks[1], &ts).unwrap(),
            Blocking {
                local: 0,
                remote: 0
            }
        );
    }

    #[test]
    fn unknown_resource_is_reported() {
        let ts = TaskSet::new(
            vec![task(1, 1, 0, 10, vec![Segment::cs("X", 1)])],
            vec![],
            0,
        );
        assert!(matches!(
            blocking_bound_mbs_paper(&ts.tasks[0], &ts),
            Err(AnalysisError::UnknownResource { .. })
        ));
    }
}
