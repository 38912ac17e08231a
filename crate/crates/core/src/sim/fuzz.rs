//! Randomized cross-checks between simulation and analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::engine::simulate;
use super::generate::generate_taskset;
use super::params::{SimParams, SimProtocol, SimResult};
use super::trace::{observed_response_times, SummaryRow, Trace};
use crate::analysis::{schedulability_test, Protocol, Segment, TaskId, TaskSet, Time};
use crate::runtime::AdmissionPolicy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzConfig {
    /// Analysis-schedulable task sets to check.
    pub sets: usize,
    pub seed: u64,
    pub max_tasks: usize,
    pub max_cores: usize,
    pub max_resources: usize,
    /// Migration cost drawn uniformly from `0..=max_delta`.
    pub max_delta: Time,
    /// Give up after this many generated sets.
    pub max_attempts: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            sets: 1000,
            seed: 1,
            max_tasks: 6,
            max_cores: 3,
            max_resources: 2,
            max_delta: 2,
            max_attempts: 100_000,
        }
    }
}

/// A task whose simulated response exceeded an analysis bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub seed: u64,
    pub task: TaskId,
    pub observed: Time,
    pub bound: Time,
    pub taskset: TaskSet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub attempts: usize,
    pub checked: usize,
    /// Exceedances of the conservative bound, or jobs left unfinished.
    pub violations: Vec<Finding>,
    /// Exceedances of the per-request bound; informational.
    pub paper_exceedances: Vec<Finding>,
}

impl FuzzReport {
    pub fn sound(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws the shape of one fuzz task set from `seed`.
pub fn fuzz_taskset(seed: u64, cfg: &FuzzConfig) -> TaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d62_735f_6675_7a7a);
    let n_tasks = rng.gen_range(2..=cfg.max_tasks.max(2));
    let n_cores = rng.gen_range(1..=cfg.max_cores.max(1));
    let n_res = rng
        .gen_range(1..=cfg.max_resources.max(1))
        .min(cfg.max_resources);
    let util = rng.gen_range(0.3..0.9) * n_cores as f64;
    let mut ts = generate_taskset(seed, n_tasks, n_cores, n_res, util)
        .expect("fuzz parameters are in range");
    ts.delta = rng.gen_range(0..=cfg.max_delta);
    ts
}

/// Simulates MBS on analysis-schedulable random task sets and compares every
/// task's worst observed response with the conservative bound.
pub fn soundness_fuzz(cfg: &FuzzConfig) -> FuzzReport {
    let mut report = FuzzReport::default();
    while report.checked < cfg.sets && report.attempts < cfg.max_attempts {
        let seed = cfg.seed.wrapping_add(report.attempts as u64);
        report.attempts += 1;
        let ts = fuzz_taskset(seed, cfg);
        let Ok(cons) = schedulability_test(&ts, Protocol::MbsConservative) else {
            continue;
        };
        if !cons.schedulable {
            continue;
        }
        let paper = schedulability_test(&ts, Protocol::MbsPaper).expect("same task set");
        let Ok(trace) = simulate(&ts, &SimParams::new(SimProtocol::Mbs)) else {
            continue;
        };
        report.checked += 1;
        for (task, obs) in observed_response_times(&trace) {
            let bound = cons.get(task).expect("analyzed").response_time;
            let observed = obs.max.unwrap_or(0);
            let finding = |bound| Finding {
                seed,
                task,
                observed,
                bound,
                taskset: ts.clone(),
            };
            if obs.unfinished || observed > bound {
                report.violations.push(finding(bound));
            }
            let pb = paper.get(task).expect("analyzed").response_time;
            if observed > pb {
                report.paper_exceedances.push(finding(pb));
            }
        }
    }
    report
}

/// Zero-overhead parameters for protocol comparisons.
fn plain(protocol: SimProtocol, admission: AdmissionPolicy) -> SimParams {
    SimParams::new(protocol)
        .with_admission(admission)
        .with_migration_cost(0)
}

/// Whether MBS+R with FIFO admission serves critical sections in exactly the
/// same `(resource, task)` order as FIFO spinlocks.
pub fn same_cs_sequence(ts: &TaskSet) -> SimResult<bool> {
    let a = simulate(ts, &plain(SimProtocol::MbsReserved, AdmissionPolicy::Fifo))?;
    let b = simulate(ts, &plain(SimProtocol::SpinFifo, AdmissionPolicy::Fifo))?;
    Ok(a.cs_sequence() == b.cs_sequence())
}

/// Worst response per task, counting a job pending at the horizon as
/// finishing there.
pub fn worst_responses(tr: &Trace) -> BTreeMap<TaskId, Time> {
    let mut out = BTreeMap::new();
    for j in &tr.jobs {
        let r = j.finish.unwrap_or(tr.horizon) - j.release;
        let e = out.entry(j.task).or_insert(0);
        *e = r.max(*e);
    }
    out
}

/// Tasks whose worst response under MBS exceeds that under FIFO spinlocks:
/// `(task, mbs, spin)`.
pub fn worse_than_spin(
    ts: &TaskSet,
    admission: AdmissionPolicy,
) -> SimResult<Vec<(TaskId, Time, Time)>> {
    let mbs = worst_responses(&simulate(ts, &plain(SimProtocol::Mbs, admission))?);
    let spin = worst_responses(&simulate(
        ts,
        &plain(SimProtocol::SpinFifo, AdmissionPolicy::Fifo),
    )?);
    Ok(mbs
        .into_iter()
        .filter_map(|(t, m)| {
            let s = spin[&t];
            (m > s).then_some((t, m, s))
        })
        .collect())
}

fn with_segments(ts: &TaskSet, task: usize, segments: Vec<Segment>) -> TaskSet {
    let mut segs: Vec<Segment> = Vec::new();
    for s in segments {
        match (segs.last_mut(), &s) {
            (Some(Segment::Exec { duration: a }), Segment::Exec { duration: b }) => *a += b,
            _ => segs.push(s),
        }
    }
    let mut out = ts.clone();
    out.tasks[task].wcet = segs.iter().map(Segment::length).sum();
    out.tasks[task].segments = segs;
    out
}

fn shrink_candidates(ts: &TaskSet) -> Vec<TaskSet> {
    let mut out = Vec::new();
    for i in 0..ts.tasks.len() {
        let mut fewer = ts.clone();
        fewer.tasks.remove(i);
        out.push(fewer);
    }
    let used: Vec<&str> = ts
        .tasks
        .iter()
        .flat_map(|t| t.critical_sections().map(|(r, _)| r))
        .collect();
    if ts.resources.iter().any(|r| !used.contains(&r.id.as_str())) {
        let mut trimmed = ts.clone();
        trimmed.resources.retain(|r| used.contains(&r.id.as_str()));
        out.push(trimmed);
    }
    if ts.delta > 0 {
        let mut d = ts.clone();
        d.delta = 0;
        out.push(d);
    }
    for (i, t) in ts.tasks.iter().enumerate() {
        for (k, seg) in t.segments.iter().enumerate() {
            let mut segs = t.segments.clone();
            if t.segments.len() > 1 {
                segs.remove(k);
                out.push(with_segments(ts, i, segs.clone()));
                segs = t.segments.clone();
            }
            if let Segment::Cs { duration, .. } = seg {
                segs[k] = Segment::exec(*duration);
                out.push(with_segments(ts, i, segs.clone()));
                segs = t.segments.clone();
            }
            let len = seg.length();
            for smaller in [len / 2, len - 1] {
                if smaller >= 1 && smaller < len {
                    segs[k] = match seg {
                        Segment::Exec { .. } => Segment::exec(smaller),
                        Segment::Cs { resource, .. } => Segment::cs(resource.clone(), smaller),
                    };
                    out.push(with_segments(ts, i, segs.clone()));
                }
            }
        }
    }
    out
}

/// Greedily shrinks `ts` while `fails` keeps holding: drops tasks, segments,
/// resources and overhead, and shortens durations.
pub fn minimize(ts: &TaskSet, mut fails: impl FnMut(&TaskSet) -> bool) -> TaskSet {
    let mut best = ts.clone();
    'outer: loop {
        for cand in shrink_candidates(&best) {
            if cand.validate_flat().is_ok() && fails(&cand) {
                best = cand;
                continue 'outer;
            }
        }
        return best;
    }
}

/// Summary rows pairing observed maxima with both MBS bounds.
pub fn summary_rows(ts: &TaskSet, tr: &Trace) -> crate::analysis::Result<Vec<SummaryRow>> {
    let paper = schedulability_test(ts, Protocol::MbsPaper)?;
    let cons = schedulability_test(ts, Protocol::MbsConservative)?;
    let observed = observed_response_times(tr);
    let mut ids: Vec<TaskId> = ts.tasks.iter().map(|t| t.id).collect();
    ids.sort_unstable();
    Ok(ids
        .into_iter()
        .map(|task| SummaryRow {
            task,
            max_response: observed.get(&task).and_then(|o| o.max),
            analyzed_bound_paper: paper.get(task).map_or(0, |r| r.response_time),
            analyzed_bound_conservative: cons.get(task).map_or(0, |r| r.response_time),
        })
        .collect())
}
