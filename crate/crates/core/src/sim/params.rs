use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::{AnalysisError, Time};
use crate::runtime::AdmissionPolicy;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] AnalysisError),
    #[error("invalid simulation parameters: {0}")]
    Params(String),
}

pub type SimResult<T> = std::result::Result<T, SimError>;

/// Synchronization protocol being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimProtocol {
    /// Migrate to the synchronization core; origin core is freed.
    Mbs,
    /// Migrate to the synchronization core; origin core stays reserved.
    MbsReserved,
    /// Non-preemptive busy waiting in ticket order on the caller's core.
    SpinFifo,
    /// Suspend in FIFO order; critical sections run preemptibly on the caller's core.
    Mutex,
}

impl SimProtocol {
    pub const ALL: [SimProtocol; 4] = [
        SimProtocol::Mbs,
        SimProtocol::MbsReserved,
        SimProtocol::SpinFifo,
        SimProtocol::Mutex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimProtocol::Mbs => "mbs",
            SimProtocol::MbsReserved => "mbs-r",
            SimProtocol::SpinFifo => "spin-fifo",
            SimProtocol::Mutex => "mutex",
        }
    }

    pub fn migrates(self) -> bool {
        matches!(self, SimProtocol::Mbs | SimProtocol::MbsReserved)
    }
}

impl fmt::Display for SimProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimProtocol {
    type Err = SimError;

    fn from_str(s: &str) -> SimResult<Self> {
        SimProtocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::Params(format!("unknown protocol {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheModel {
    /// Lines per resource unless overridden in `line_count`.
    pub default_lines: usize,
    pub line_count: BTreeMap<String, usize>,
    pub hit_cost: Time,
    pub miss_cost: Time,
    pub l1_capacity_lines: usize,
    /// Start with every resource's lines owned by and resident at its
    /// synchronization core.
    pub warm_sync_cores: bool,
}

impl Default for CacheModel {
    /// Costs are zero, so critical sections take exactly their declared time.
    fn default() -> Self {
        CacheModel {
            default_lines: 8,
            line_count: BTreeMap::new(),
            hit_cost: 0,
            miss_cost: 0,
            l1_capacity_lines: 512,
            warm_sync_cores: false,
        }
    }
}

impl CacheModel {
    pub fn lines_of(&self, resource: &str) -> usize {
        self.line_count
            .get(resource)
            .copied()
            .unwrap_or(self.default_lines)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimParams {
    pub protocol: SimProtocol,
    /// Cost of one migration in either direction. Defaults to the task set's delta.
    pub migration_cost: Option<Time>,
    /// Service order at synchronization cores.
    pub admission: AdmissionPolicy,
    pub cache: CacheModel,
    /// Jobs are released strictly before this time; the run stops here.
    /// `None` means one hyperperiod.
    pub horizon: Option<Time>,
    /// Seed used when the task set itself is generated.
    pub seed: u64,
}

impl SimParams {
    pub fn new(protocol: SimProtocol) -> Self {
        SimParams {
            protocol,
            migration_cost: None,
            admission: AdmissionPolicy::Priority,
            cache: CacheModel::default(),
            horizon: None,
            seed: 0,
        }
    }

    pub fn with_horizon(mut self, horizon: Time) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_admission(mut self, admission: AdmissionPolicy) -> Self {
        self.admission = admission;
        self
    }

    pub fn with_cache(mut self, cache: CacheModel) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_migration_cost(mut self, cost: Time) -> Self {
        self.migration_cost = Some(cost);
        self
    }

    pub(crate) fn check(&self) -> SimResult<()> {
        if self.cache.hit_cost > self.cache.miss_cost {
            return Err(SimError::Params("hit cost exceeds miss cost".into()));
        }
        if self.horizon == Some(0) {
            return Err(SimError::Params("horizon must be positive".into()));
        }
        Ok(())
    }
}
