use std::io;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::buffer::LineBuffer;
use super::config::{BenchConfig, BenchError, Variant};
use super::counters::{current_tid, CounterEvent, ThreadCounter};
use crate::runtime::affinity::{allowed_cpus, pin_current_thread};
use crate::runtime::{
    default_sync_core, monotonic_ns, AdmissionPolicy, BaselineKind, BaselineLock, CriticalSection,
    MbsMutex, SyncCore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySample {
    pub thread: usize,
    pub cycle_index: usize,
    /// Whole cycle: private walk, lock, shared walk, unlock.
    pub cycle_ns: u64,
    /// From the first to the last shared access inside the critical section.
    pub cs_ns: u64,
    /// Counter increase across the critical section, if counting.
    pub shared_cache_accesses: Option<u64>,
    pub warmup: bool,
}

/// Which buffer a recorded touch went to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Touch {
    Local(usize),
    Shared(usize),
}

/// Where the worker threads ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub sync_cpu: Option<usize>,
    pub worker_cpus: Vec<usize>,
    /// Every worker had its own CPU, distinct from the synchronization core.
    pub distinct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CounterStatus {
    Disabled,
    Active(CounterEvent),
    /// Requested but not available; samples carry no counter values.
    Unavailable(String),
}

#[derive(Debug)]
pub struct BenchOutput {
    pub variant: Variant,
    /// One list per worker thread, in cycle order.
    pub per_thread: Vec<Vec<LatencySample>>,
    pub placement: Placement,
    pub counters: CounterStatus,
    /// Final per-line values of the shared buffer.
    pub shared_final: Vec<u64>,
    pub shared_writes_per_cycle: usize,
    /// Touches of each thread's first cycle when tracing was requested.
    pub touches: Vec<Vec<Touch>>,
    pub elapsed: Duration,
}

impl BenchOutput {
    pub fn samples(&self) -> Vec<LatencySample> {
        self.per_thread.iter().flatten().copied().collect()
    }

    /// Samples after each thread's warmup.
    pub fn steady_samples(&self) -> Vec<LatencySample> {
        self.per_thread
            .iter()
            .flatten()
            .filter(|s| !s.warmup)
            .copied()
            .collect()
    }

    /// Whether every shared line was written exactly `threads * cycles` times.
    pub fn shared_intact(&self, cfg: &BenchConfig) -> bool {
        let expected = (cfg.threads * cfg.cycles) as u64;
        self.shared_final.iter().all(|&v| v == expected)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.placement.distinct {
            w.push(format!(
                "too few CPUs for dedicated placement; workers share CPUs {:?}",
                self.placement.worker_cpus
            ));
        }
        if let CounterStatus::Unavailable(reason) = &self.counters {
            w.push(format!("counters disabled: {reason}"));
        }
        w
    }
}

/// Assigns worker threads to CPUs other than the synchronization core,
/// sharing CPUs round-robin when there are too few (unless `strict`).
pub fn plan_placement(
    threads: usize,
    sync_cpu: Option<usize>,
    allowed: &[usize],
    strict: bool,
) -> Result<Placement, BenchError> {
    let app: Vec<usize> = allowed
        .iter()
        .copied()
        .filter(|&c| Some(c) != sync_cpu)
        .collect();
    let distinct = app.len() >= threads;
    if !distinct && strict {
        return Err(BenchError::Environment(format!(
            "{threads} worker threads need {} CPUs besides the synchronization core, {} available",
            threads,
            app.len()
        )));
    }
    let pool = if app.is_empty() { allowed } else { &app };
    if pool.is_empty() {
        return Err(BenchError::Environment("no CPUs available".into()));
    }
    Ok(Placement {
        sync_cpu,
        worker_cpus: (0..threads).map(|i| pool[i % pool.len()]).collect(),
        distinct,
    })
}

struct Shared<'a> {
    cfg: &'a BenchConfig,
    /// Thread whose counter sees the critical section; `None` means the worker itself.
    cs_tid: Option<i32>,
    counter_error: Mutex<Option<String>>,
}

struct WorkerResult {
    samples: Vec<LatencySample>,
    touches: Vec<Touch>,
}

fn worker<L: CriticalSection<LineBuffer>>(
    lock: &L,
    shared: &Shared<'_>,
    index: usize,
    cpu: usize,
) -> Result<WorkerResult, BenchError> {
    let cfg = shared.cfg;
    pin_current_thread(cpu)?;
    let mut local = LineBuffer::new(cfg.lambda_lines(), cfg.cache_line_bytes);
    let mut counter = if cfg.counters_enabled {
        match ThreadCounter::open(cfg.counter_event, shared.cs_tid.unwrap_or_else(current_tid)) {
            Ok(c) => Some(c),
            Err(e) => {
                shared
                    .counter_error
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .get_or_insert(e.to_string());
                None
            }
        }
    } else {
        None
    };
    let warmup = cfg.warmup_cycles();
    let mut samples = Vec::with_capacity(cfg.cycles);
    let mut touches = Vec::new();

    for cycle in 0..cfg.cycles {
        let trace = cfg.trace_touches && cycle == 0;
        let t0 = monotonic_ns();
        for i in 0..local.lines() {
            local.touch(i);
            if trace {
                touches.push(Touch::Local(i));
            }
        }
        let counter_ref = counter.as_mut();
        let touches_ref = &mut touches;
        let (s, e, delta) = lock.critical(0, move |buf: &mut LineBuffer| {
            let mut counter_ref = counter_ref;
            let c0 = counter_ref.as_mut().and_then(|c| c.read().ok());
            let s = monotonic_ns();
            for i in 0..buf.lines() {
                buf.touch(i);
                if trace {
                    touches_ref.push(Touch::Shared(i));
                }
            }
            let e = monotonic_ns();
            let c1 = counter_ref.as_mut().and_then(|c| c.read().ok());
            let delta = c0.zip(c1).map(|(a, b)| b.saturating_sub(a));
            (s, e, delta)
        })?;
        let t1 = monotonic_ns();
        debug_assert!(t0 <= s && s <= e && e <= t1);
        samples.push(LatencySample {
            thread: index,
            cycle_index: cycle,
            cycle_ns: t1 - t0,
            cs_ns: e - s,
            shared_cache_accesses: delta,
            warmup: cycle < warmup,
        });
    }
    Ok(WorkerResult { samples, touches })
}

fn drive<L: CriticalSection<LineBuffer>>(
    lock: &L,
    cfg: &BenchConfig,
    placement: &Placement,
    cs_tid: Option<i32>,
) -> Result<(Vec<WorkerResult>, CounterStatus), BenchError> {
    let shared = Shared {
        cfg,
        cs_tid,
        counter_error: Mutex::new(None),
    };
    let results = thread::scope(|scope| {
        let handles: Vec<_> = placement
            .worker_cpus
            .iter()
            .enumerate()
            .map(|(i, &cpu)| {
                let shared = &shared;
                thread::Builder::new()
                    .name(format!("bench-{i}"))
                    .spawn_scoped(scope, move || worker(lock, shared, i, cpu))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                let h = h.map_err(|e| BenchError::Environment(e.to_string()))?;
                h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))
            })
            .collect::<Result<Vec<_>, BenchError>>()
    })?;
    let status = match (cfg.counters_enabled, shared.counter_error.into_inner()) {
        (false, _) => CounterStatus::Disabled,
        (true, Ok(Some(e))) => CounterStatus::Unavailable(e),
        (true, Ok(None)) => CounterStatus::Active(cfg.counter_event),
        (true, Err(p)) => CounterStatus::Unavailable(format!("{:?}", p.into_inner())),
    };
    Ok((results, status))
}

/// Runs the buffer-walk microbenchmark. Every cycle writes one word per line
/// of a private buffer, then one word per line of the shared buffer inside a
/// critical section of the configured lock. All samples are returned,
/// including warmup cycles, which are flagged.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutput, BenchError> {
    cfg.validate()?;
    let sync_cpu = if cfg.variant.migrates() {
        Some(match cfg.sync_core {
            Some(c) => c,
            None => default_sync_core()?,
        })
    } else {
        None
    };
    let placement = plan_placement(cfg.threads, sync_cpu, &allowed_cpus(), cfg.strict_pinning)?;
    let buffer = LineBuffer::new(cfg.sigma_lines(), cfg.cache_line_bytes);
    let start = Instant::now();

    let (results, counters, buffer) = match cfg.variant {
        Variant::Mbs | Variant::MbsR => {
            let core = SyncCore::new(sync_cpu.expect("set above"), AdmissionPolicy::Priority)?;
            let m = MbsMutex::new(&core, cfg.variant == Variant::MbsR, buffer)?;
            let (r, c) = drive(&m, cfg, &placement, Some(core.executor_tid()))?;
            (r, c, m.into_inner())
        }
        Variant::Spinlock | Variant::Mutex => {
            let kind = if cfg.variant == Variant::Spinlock {
                BaselineKind::Spinlock
            } else {
                BaselineKind::Mutex
            };
            let lock = BaselineLock::new(kind, buffer);
            let (r, c) = drive(&lock, cfg, &placement, None)?;
            (r, c, lock.into_inner())
        }
    };
    let elapsed = start.elapsed();
    let (per_thread, touches) = results.into_iter().map(|r| (r.samples, r.touches)).unzip();
    Ok(BenchOutput {
        variant: cfg.variant,
        per_thread,
        placement,
        counters,
        shared_final: buffer.values(),
        shared_writes_per_cycle: buffer.lines(),
        touches,
        elapsed,
    })
}

#[derive(Serialize)]
struct Row<'a> {
    variant: &'a str,
    thread: usize,
    cycle_index: usize,
    cycle_ns: u64,
    cs_ns: u64,
    shared_cache_accesses: Option<u64>,
}

/// One CSV row per sample, header first.
pub fn write_samples_csv<W: io::Write>(
    variant: Variant,
    samples: &[LatencySample],
    w: W,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if samples.is_empty() {
        out.write_record([
            "variant",
            "thread",
            "cycle_index",
            "cycle_ns",
            "cs_ns",
            "shared_cache_accesses",
        ])?;
    }
    for s in samples {
        out.serialize(Row {
            variant: variant.name(),
            thread: s.thread,
            cycle_index: s.cycle_index,
            cycle_ns: s.cycle_ns,
            cs_ns: s.cs_ns,
            shared_cache_accesses: s.shared_cache_accesses,
        })?;
    }
    out.flush()?;
    Ok(())
}
