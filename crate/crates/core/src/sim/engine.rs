//! Discrete-event scheduler for partitioned fixed-priority multicores.
//!
//! Simultaneous happenings at one instant are processed in phases: completions
//! of running work, releases, arrivals of migrating jobs, then dispatching.
//! Within a phase, jobs are taken in task-id order, and the trace records
//! events in the order they were processed.

use std::cmp::Reverse;
use std::collections::{BTreeMap, VecDeque};

use super::cache::{Access, CacheState};
use super::params::{SimError, SimParams, SimProtocol, SimResult};
use super::trace::{CoreTime, CsRecord, EventKind, JobRecord, SimEvent, Trace};
use crate::analysis::{expand_group_locks, Segment, TaskSet, Time};
use crate::runtime::AdmissionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Ready on its core (or running).
    OnCore,
    /// Busy-waiting for a ticket lock; occupies its core.
    Spinning,
    /// Migrating to, queued at, or served by a synchronization core.
    Away,
    /// Blocked on a suspending mutex.
    Suspended,
    Done,
}

#[derive(Debug)]
struct Job {
    task: usize,
    seg: usize,
    remaining: Time,
    phase: Phase,
    requested: bool,
    request_time: Time,
    cs: Option<usize>,
}

#[derive(Debug, Default)]
struct AppCore {
    running: Option<usize>,
    /// Job that owns the core regardless of priority: a spinner, a
    /// non-preemptive lock holder, or a reservation for a job that is away.
    hold: Option<usize>,
}

#[derive(Debug, Default)]
struct SyncState {
    serving: Option<usize>,
    queue: Vec<(i64, u64, usize)>,
}

#[derive(Debug, Default)]
struct Lock {
    holder: Option<usize>,
    queue: VecDeque<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Transit {
    ToSync,
    ToOrigin,
}

struct Engine<'a> {
    ts: &'a TaskSet,
    params: &'a SimParams,
    delta: Time,
    horizon: Time,
    now: Time,
    jobs: Vec<Job>,
    active: Vec<usize>,
    apps: BTreeMap<usize, AppCore>,
    syncs: BTreeMap<usize, SyncState>,
    locks: BTreeMap<String, Lock>,
    transit: Vec<(Time, Transit, usize)>,
    next_release: Vec<Time>,
    /// Task indices in id order.
    order: Vec<usize>,
    seq: u64,
    cache: CacheState,
    res_index: BTreeMap<String, usize>,
    trace: Trace,
}

/// Runs `ts` under `params` from a synchronous release at time 0.
pub fn simulate(ts: &TaskSet, params: &SimParams) -> SimResult<Trace> {
    params.check()?;
    let ts = expand_group_locks(ts)?;
    ts.validate_flat()?;
    let horizon = match (ts.hyperperiod(), params.horizon) {
        (Some(h), Some(cap)) => h.min(cap),
        (Some(h), None) => h,
        (None, Some(cap)) => cap,
        (None, None) => {
            return Err(SimError::Params(
                "hyperperiod overflows; give an explicit horizon".into(),
            ))
        }
    };
    Ok(Engine::new(&ts, params, horizon).run())
}

impl<'a> Engine<'a> {
    fn new(ts: &'a TaskSet, params: &'a SimParams, horizon: Time) -> Self {
        let mut apps = BTreeMap::new();
        let mut cores = BTreeMap::new();
        for c in ts.application_cores() {
            apps.insert(c, AppCore::default());
            cores.insert(c, CoreTime::default());
        }
        let mut syncs = BTreeMap::new();
        if params.protocol.migrates() {
            for c in ts.sync_cores() {
                syncs.insert(c, SyncState::default());
                cores.insert(c, CoreTime::default());
            }
        }
        let res_index: BTreeMap<String, usize> = ts
            .resources
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let mut cache = CacheState::new(params.cache.l1_capacity_lines);
        if params.cache.warm_sync_cores {
            for (i, r) in ts.resources.iter().enumerate() {
                for line in 0..params.cache.lines_of(&r.id) {
                    cache.preload(r.sync_core, (i, line));
                }
            }
        }
        let mut order: Vec<usize> = (0..ts.tasks.len()).collect();
        order.sort_by_key(|&i| ts.tasks[i].id);
        Engine {
            ts,
            params,
            delta: params.migration_cost.unwrap_or(ts.delta),
            horizon,
            now: 0,
            jobs: Vec::new(),
            active: Vec::new(),
            apps,
            syncs,
            locks: ts
                .resources
                .iter()
                .map(|r| (r.id.clone(), Lock::default()))
                .collect(),
            transit: Vec::new(),
            next_release: vec![0; ts.tasks.len()],
            order,
            seq: 0,
            cache,
            res_index,
            trace: Trace {
                cores,
                horizon,
                ..Default::default()
            },
        }
    }

    fn run(mut self) -> Trace {
        loop {
            self.release_due();
            self.arrivals_due();
            self.settle();
            let target = self.next_time().unwrap_or(self.horizon).min(self.horizon);
            self.advance(target - self.now);
            self.now = target;
            self.complete_due();
            if self.now >= self.horizon {
                self.arrivals_due();
                break;
            }
        }
        self.trace
    }

    fn emit(&mut self, kind: EventKind, job: usize, core: usize) {
        let task = self.ts.tasks[self.jobs[job].task].id;
        self.trace.events.push(SimEvent {
            time: self.now,
            kind,
            task,
            core,
        });
    }

    fn task_id(&self, job: usize) -> u32 {
        self.ts.tasks[self.jobs[job].task].id
    }

    fn priority(&self, job: usize) -> i64 {
        self.ts.tasks[self.jobs[job].task].priority
    }

    fn origin(&self, job: usize) -> usize {
        self.ts.tasks[self.jobs[job].task].processor
    }

    fn segment(&self, job: usize) -> Option<&'a Segment> {
        let j = &self.jobs[job];
        self.ts.tasks[j.task].segments.get(j.seg)
    }

    fn cs_resource(&self, job: usize) -> Option<&'a str> {
        match self.segment(job) {
            Some(Segment::Cs { resource, .. }) => Some(resource),
            _ => None,
        }
    }

    fn enter_segment(&mut self, job: usize) {
        let rem = self.segment(job).map_or(0, Segment::length);
        let j = &mut self.jobs[job];
        j.remaining = rem;
        j.requested = false;
    }

    fn by_task_id(&self, mut jobs: Vec<usize>) -> Vec<usize> {
        jobs.sort_by_key(|&j| (self.task_id(j), j));
        jobs
    }

    fn release_due(&mut self) {
        if self.now >= self.horizon {
            return;
        }
        for k in 0..self.order.len() {
            let i = self.order[k];
            if self.next_release[i] != self.now {
                continue;
            }
            let t = &self.ts.tasks[i];
            self.next_release[i] += t.period;
            let job = self.jobs.len();
            self.jobs.push(Job {
                task: i,
                seg: 0,
                remaining: 0,
                phase: Phase::OnCore,
                requested: false,
                request_time: 0,
                cs: None,
            });
            self.trace.jobs.push(JobRecord {
                task: t.id,
                release: self.now,
                finish: None,
            });
            self.active.push(job);
            self.enter_segment(job);
            self.emit(EventKind::Release, job, t.processor);
        }
    }

    fn arrivals_due(&mut self) {
        let now = self.now;
        let mut due: Vec<(Transit, u32, usize)> = Vec::new();
        self.transit.retain(|&(t, kind, job)| {
            if t <= now {
                due.push((kind, 0, job));
                false
            } else {
                true
            }
        });
        for d in &mut due {
            d.1 = self.task_id(d.2);
        }
        due.sort();
        for (kind, _, job) in due {
            match kind {
                Transit::ToSync => self.enqueue(job),
                Transit::ToOrigin => self.arrive_home(job),
            }
        }
    }

    fn arrive_home(&mut self, job: usize) {
        let core = self.origin(job);
        self.emit(EventKind::MigrateBack, job, core);
        self.jobs[job].phase = Phase::OnCore;
        let app = self.apps.get_mut(&core).expect("origin core exists");
        if app.hold == Some(job) {
            app.hold = None;
        }
        if self.segment(job).is_none() {
            self.finish(job, core);
        }
    }

    fn finish(&mut self, job: usize, core: usize) {
        self.jobs[job].phase = Phase::Done;
        self.trace.jobs[job].finish = Some(self.now);
        self.active.retain(|&j| j != job);
        let app = self.apps.get_mut(&core).expect("origin core exists");
        if app.running == Some(job) {
            app.running = None;
        }
        self.emit(EventKind::Finish, job, core);
    }

    fn enqueue(&mut self, job: usize) {
        let resource = self
            .cs_resource(job)
            .expect("queued job is in a critical section");
        let core = self.ts.sync_core_of(resource).expect("validated resource");
        let key = match self.params.admission {
            AdmissionPolicy::Priority => self.priority(job),
            AdmissionPolicy::Fifo => 0,
        };
        self.seq += 1;
        let seq = self.seq;
        self.syncs
            .get_mut(&core)
            .expect("sync core exists")
            .queue
            .push((key, seq, job));
        self.emit(EventKind::CsEnqueue, job, core);
    }

    /// Performs the accesses of the job's critical section from `core` and
    /// opens its record; returns the section's total service time.
    fn open_cs(&mut self, job: usize, core: usize) -> Time {
        let resource = self.cs_resource(job).expect("job is in a critical section");
        let ri = self.res_index[resource];
        let (mut hits, mut misses) = (0u64, 0u64);
        for line in 0..self.params.cache.lines_of(resource) {
            match self.cache.access(core, (ri, line)) {
                Access::Hit => hits += 1,
                Access::Miss => misses += 1,
            }
        }
        let cost = hits * self.params.cache.hit_cost + misses * self.params.cache.miss_cost;
        self.trace.cs.push(CsRecord {
            task: self.task_id(job),
            job,
            resource: resource.to_string(),
            core,
            request: self.jobs[job].request_time,
            start: self.now,
            end: None,
            hits,
            misses,
        });
        self.jobs[job].cs = Some(self.trace.cs.len() - 1);
        self.emit(EventKind::CsStart, job, core);
        self.jobs[job].remaining + cost
    }

    fn close_cs(&mut self, job: usize, core: usize) {
        if let Some(i) = self.jobs[job].cs.take() {
            self.trace.cs[i].end = Some(self.now);
        }
        self.emit(EventKind::CsEnd, job, core);
    }

    fn start_local_cs(&mut self, job: usize) {
        let core = self.origin(job);
        let total = self.open_cs(job, core);
        let j = &mut self.jobs[job];
        j.remaining = total;
        j.phase = Phase::OnCore;
    }

    fn settle(&mut self) {
        loop {
            let mut changed = false;

            let idle: Vec<usize> = self
                .syncs
                .iter()
                .filter(|(_, s)| s.serving.is_none() && !s.queue.is_empty())
                .map(|(&c, _)| c)
                .collect();
            for core in idle {
                let s = self.syncs.get_mut(&core).expect("listed");
                let best = (0..s.queue.len())
                    .max_by_key(|&i| (s.queue[i].0, Reverse(s.queue[i].1)))
                    .expect("non-empty");
                let (_, _, job) = s.queue.swap_remove(best);
                s.serving = Some(job);
                let total = self.open_cs(job, core);
                self.jobs[job].remaining = total;
                changed = true;
            }

            let cores: Vec<usize> = self.apps.keys().copied().collect();
            for core in cores {
                self.dispatch(core);
            }

            let requests: Vec<usize> = self
                .apps
                .values()
                .filter_map(|c| c.running)
                .filter(|&j| self.cs_resource(j).is_some() && !self.jobs[j].requested)
                .collect();
            for job in self.by_task_id(requests) {
                self.request(job);
                changed = true;
            }

            if !changed {
                break;
            }
        }
    }

    fn dispatch(&mut self, core: usize) {
        let app = &self.apps[&core];
        let target = match app.hold {
            Some(h) => matches!(self.jobs[h].phase, Phase::OnCore | Phase::Spinning).then_some(h),
            None => self
                .active
                .iter()
                .copied()
                .filter(|&j| {
                    self.origin(j) == core
                        && self.jobs[j].phase == Phase::OnCore
                        && self.oldest_of_task(j)
                })
                .max_by_key(|&j| (self.priority(j), Reverse(j))),
        };
        let running = app.running;
        if target != running {
            if let Some(r) = running {
                self.emit(EventKind::Preempt, r, core);
            }
            if let Some(t) = target {
                self.emit(EventKind::Start, t, core);
            }
            self.apps.get_mut(&core).expect("listed").running = target;
        }
    }

    /// Jobs of one task run in release order; a late job blocks its successor.
    fn oldest_of_task(&self, job: usize) -> bool {
        let task = self.jobs[job].task;
        !self
            .active
            .iter()
            .any(|&j| j < job && self.jobs[j].task == task)
    }

    /// Leaves the core without finishing (migration or suspension).
    fn vacate(&mut self, job: usize, core: usize) {
        self.emit(EventKind::Preempt, job, core);
        self.apps.get_mut(&core).expect("listed").running = None;
    }

    fn request(&mut self, job: usize) {
        let core = self.origin(job);
        let resource = self.cs_resource(job).expect("job is at a critical section");
        self.jobs[job].requested = true;
        self.jobs[job].request_time = self.now;
        match self.params.protocol {
            SimProtocol::Mbs | SimProtocol::MbsReserved => {
                self.vacate(job, core);
                self.emit(EventKind::MigrateOut, job, core);
                self.jobs[job].phase = Phase::Away;
                if self.params.protocol == SimProtocol::MbsReserved {
                    self.apps.get_mut(&core).expect("listed").hold = Some(job);
                }
                if self.delta == 0 {
                    self.enqueue(job);
                } else {
                    self.transit
                        .push((self.now + self.delta, Transit::ToSync, job));
                }
            }
            SimProtocol::SpinFifo => {
                self.emit(EventKind::CsEnqueue, job, core);
                self.apps.get_mut(&core).expect("listed").hold = Some(job);
                let lock = self.locks.get_mut(resource).expect("validated resource");
                if lock.holder.is_none() {
                    lock.holder = Some(job);
                    self.start_local_cs(job);
                } else {
                    lock.queue.push_back(job);
                    self.jobs[job].phase = Phase::Spinning;
                }
            }
            SimProtocol::Mutex => {
                self.emit(EventKind::CsEnqueue, job, core);
                let lock = self.locks.get_mut(resource).expect("validated resource");
                if lock.holder.is_none() {
                    lock.holder = Some(job);
                    self.start_local_cs(job);
                } else {
                    lock.queue.push_back(job);
                    self.jobs[job].phase = Phase::Suspended;
                    self.vacate(job, core);
                }
            }
        }
    }

    fn next_time(&self) -> Option<Time> {
        let releases = self
            .next_release
            .iter()
            .copied()
            .filter(|&t| t < self.horizon);
        let transit = self.transit.iter().map(|&(t, _, _)| t);
        let local = self
            .apps
            .values()
            .filter_map(|c| c.running)
            .filter(|&j| self.jobs[j].phase == Phase::OnCore)
            .map(|j| self.now + self.jobs[j].remaining);
        let remote = self
            .syncs
            .values()
            .filter_map(|s| s.serving)
            .map(|j| self.now + self.jobs[j].remaining);
        releases.chain(transit).chain(local).chain(remote).min()
    }

    fn advance(&mut self, dt: Time) {
        if dt == 0 {
            return;
        }
        for (core, app) in &self.apps {
            let acc = self.trace.cores.get_mut(core).expect("listed");
            match app.running {
                Some(j) => {
                    acc.busy += dt;
                    if self.jobs[j].phase == Phase::OnCore {
                        self.jobs[j].remaining -= dt;
                    }
                }
                None if app.hold.is_some() => acc.reserved += dt,
                None => acc.idle += dt,
            }
        }
        for (core, s) in &self.syncs {
            let acc = self.trace.cores.get_mut(core).expect("listed");
            match s.serving {
                Some(j) => {
                    acc.busy += dt;
                    self.jobs[j].remaining -= dt;
                }
                None => acc.idle += dt,
            }
        }
    }

    fn complete_due(&mut self) {
        let served: Vec<usize> = self
            .syncs
            .values()
            .filter_map(|s| s.serving)
            .filter(|&j| self.jobs[j].remaining == 0)
            .collect();
        for job in self.by_task_id(served) {
            let resource = self.cs_resource(job).expect("served job is in a section");
            let core = self.ts.sync_core_of(resource).expect("validated resource");
            self.close_cs(job, core);
            self.syncs.get_mut(&core).expect("listed").serving = None;
            self.jobs[job].seg += 1;
            self.enter_segment(job);
            self.transit
                .push((self.now + self.delta, Transit::ToOrigin, job));
        }

        let done: Vec<usize> = self
            .apps
            .values()
            .filter_map(|c| c.running)
            .filter(|&j| self.jobs[j].phase == Phase::OnCore && self.jobs[j].remaining == 0)
            .collect();
        for job in self.by_task_id(done) {
            let core = self.origin(job);
            if let Some(resource) = self.cs_resource(job) {
                self.close_cs(job, core);
                self.release_lock(resource);
                let app = self.apps.get_mut(&core).expect("listed");
                if app.hold == Some(job) {
                    app.hold = None;
                }
            }
            self.jobs[job].seg += 1;
            self.enter_segment(job);
            if self.segment(job).is_none() {
                self.finish(job, core);
            }
        }
    }

    fn release_lock(&mut self, resource: &str) {
        let lock = self.locks.get_mut(resource).expect("validated resource");
        lock.holder = lock.queue.pop_front();
        if let Some(next) = lock.holder {
            self.start_local_cs(next);
        }
    }
}
