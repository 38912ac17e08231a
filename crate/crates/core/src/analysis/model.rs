use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer time units (ticks).
pub type Time = u64;
pub type TaskId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("duplicate task id {0}")]
    DuplicateTaskId(TaskId),
    #[error("priority {0} is used by more than one task")]
    DuplicatePriority(i64),
    #[error("task {0}: period must be positive")]
    ZeroPeriod(TaskId),
    #[error("task {0}: segment durations must be positive")]
    ZeroDuration(TaskId),
    #[error("task {task}: segments sum to {sum}, but wcet is {wcet}")]
    WcetMismatch { task: TaskId, wcet: Time, sum: Time },
    #[error("task {task}: unknown resource {resource:?}")]
    UnknownResource { task: TaskId, resource: String },
    #[error("resource {0:?} declared twice")]
    DuplicateResource(String),
    #[error("core {0} is used both as an application core and a synchronization core")]
    CoreConflict(usize),
    #[error("task {0}: nested critical sections must be merged into a group lock first")]
    NestedCriticalSection(TaskId),
    #[error("group id {0:?} collides with a resource id")]
    GroupIdClash(String),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("analysis window must be positive")]
    ZeroWindow,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// One piece of a job's execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Segment {
    Exec {
        duration: Time,
    },
    /// A critical section on `resource`. `duration` is the section's own
    /// work; `segments` are nested pieces executed while it is held.
    Cs {
        resource: String,
        duration: Time,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        segments: Vec<Segment>,
    },
}

impl Segment {
    pub fn exec(duration: Time) -> Self {
        Segment::Exec { duration }
    }

    pub fn cs(resource: impl Into<String>, duration: Time) -> Self {
        Segment::Cs {
            resource: resource.into(),
            duration,
            segments: Vec::new(),
        }
    }

    /// Total time, nested pieces included.
    pub fn length(&self) -> Time {
        match self {
            Segment::Exec { duration } => *duration,
            Segment::Cs {
                duration, segments, ..
            } => duration + segments.iter().map(Segment::length).sum::<Time>(),
        }
    }

    fn all_positive(&self) -> bool {
        match self {
            Segment::Exec { duration } => *duration > 0,
            Segment::Cs {
                duration, segments, ..
            } => *duration > 0 && segments.iter().all(Segment::all_positive),
        }
    }

    fn visit_resources<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let Segment::Cs {
            resource, segments, ..
        } = self
        {
            out.push(resource);
            for s in segments {
                s.visit_resources(out);
            }
        }
    }

    fn has_nested_cs(&self) -> bool {
        match self {
            Segment::Exec { .. } => false,
            Segment::Cs { segments, .. } => segments
                .iter()
                .any(|s| matches!(s, Segment::Cs { .. }) || s.has_nested_cs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Period, also the implicit deadline.
    pub period: Time,
    pub wcet: Time,
    /// Larger is more urgent.
    pub priority: i64,
    pub processor: usize,
    pub segments: Vec<Segment>,
}

impl TaskSpec {
    /// Top-level critical sections as `(resource, length)`.
    pub fn critical_sections(&self) -> impl Iterator<Item = (&str, Time)> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Cs { resource, .. } => Some((resource.as_str(), s.length())),
            Segment::Exec { .. } => None,
        })
    }

    /// Longest top-level critical section on any resource in `resources`.
    pub fn longest_cs_on(&self, mut on: impl FnMut(&str) -> bool) -> Option<Time> {
        self.critical_sections()
            .filter(|(r, _)| on(r))
            .map(|(_, l)| l)
            .max()
    }

    pub fn utilization(&self) -> f64 {
        self.wcet as f64 / self.period as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSpec {
    pub id: String,
    pub sync_core: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskSet {
    pub tasks: Vec<TaskSpec>,
    pub resources: Vec<ResourceSpec>,
    /// Migration overhead per direction.
    pub delta: Time,
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>, resources: Vec<ResourceSpec>, delta: Time) -> Self {
        TaskSet {
            tasks,
            resources,
            delta,
        }
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or(AnalysisError::UnknownTask(id))
    }

    pub fn resource(&self, id: &str) -> Option<&ResourceSpec> {
        self.resources.iter().find(|r| r.id == id)
    }

    pub fn sync_core_of(&self, resource: &str) -> Option<usize> {
        self.resource(resource).map(|r| r.sync_core)
    }

    pub fn application_cores(&self) -> BTreeSet<usize> {
        self.tasks.iter().map(|t| t.processor).collect()
    }

    pub fn sync_cores(&self) -> BTreeSet<usize> {
        self.resources.iter().map(|r| r.sync_core).collect()
    }

    /// Tasks ordered from most to least urgent.
    pub fn by_priority(&self) -> Vec<&TaskSpec> {
        let mut v: Vec<_> = self.tasks.iter().collect();
        v.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.id.cmp(&b.id)));
        v
    }

    /// Least common multiple of all periods; `None` on overflow.
    pub fn hyperperiod(&self) -> Option<Time> {
        fn gcd(a: Time, b: Time) -> Time {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        self.tasks.iter().try_fold(1 as Time, |acc, t| {
            (acc / gcd(acc, t.period)).checked_mul(t.period)
        })
    }

    pub fn utilization(&self) -> f64 {
        self.tasks.iter().map(TaskSpec::utilization).sum()
    }

    /// Structural checks shared by analysis and simulation. `wcet > period`
    /// is allowed; such a task is simply unschedulable.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut prios = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id) {
                return Err(AnalysisError::DuplicateTaskId(t.id));
            }
            if !prios.insert(t.priority) {
                return Err(AnalysisError::DuplicatePriority(t.priority));
            }
            if t.period == 0 {
                return Err(AnalysisError::ZeroPeriod(t.id));
            }
            if t.segments.is_empty() || !t.segments.iter().all(Segment::all_positive) {
                return Err(AnalysisError::ZeroDuration(t.id));
            }
            let sum: Time = t.segments.iter().map(Segment::length).sum();
            if sum != t.wcet {
                return Err(AnalysisError::WcetMismatch {
                    task: t.id,
                    wcet: t.wcet,
                    sum,
                });
            }
            let mut used = Vec::new();
            for s in &t.segments {
                s.visit_resources(&mut used);
            }
            if let Some(r) = used.into_iter().find(|r| self.resource(r).is_none()) {
                return Err(AnalysisError::UnknownResource {
                    task: t.id,
                    resource: r.to_string(),
                });
            }
        }
        let mut rids = BTreeSet::new();
        for r in &self.resources {
            if !rids.insert(r.id.as_str()) {
                return Err(AnalysisError::DuplicateResource(r.id.clone()));
            }
        }
        let app = self.application_cores();
        if let Some(&c) = self.sync_cores().intersection(&app).next() {
            return Err(AnalysisError::CoreConflict(c));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus: no nested critical sections remain.
    pub fn validate_flat(&self) -> Result<()> {
        self.validate()?;
        for t in &self.tasks {
            if t.segments.iter().any(Segment::has_nested_cs) {
                return Err(AnalysisError::NestedCriticalSection(t.id));
            }
        }
        Ok(())
    }

    /// Resources grouped by the synchronization core that serves them.
    pub fn resources_by_core(&self) -> BTreeMap<usize, Vec<&str>> {
        let mut m: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for r in &self.resources {
            m.entry(r.sync_core).or_default().push(&r.id);
        }
        m
    }
}
