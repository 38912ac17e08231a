//! Command-line front end. Exit codes: 0 success, 1 a checked property was
//! violated, 2 usage, configuration or environment error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{parse_taskset, schedulability_test, Protocol, TaskSet};
use crate::bench::{
    compute_stats, parse_size, run_benchmark, write_samples_csv, BenchConfig, CounterEvent, Field,
    LatencyStats, Variant,
};
use crate::runtime::AdmissionPolicy;
use crate::sim::{
    minimize, observed_response_times, same_cs_sequence, simulate, soundness_fuzz, summary_rows,
    worse_than_spin, write_summary_csv, CacheModel, FuzzConfig, SimParams, SimProtocol,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mbs",
    version,
    about = "Migration-based synchronization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the buffer-walk lock microbenchmark.
    Bench(BenchArgs),
    /// Response-time analysis of a task-set file.
    Analyze(AnalyzeArgs),
    /// Simulate a task-set file under one protocol.
    Simulate(SimulateArgs),
    /// Check simulated responses against the analysis on random task sets.
    SoundnessFuzz(FuzzArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    /// Worker threads [default: 4, or 3 for mbs-r]
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    cycles: usize,
    /// Private buffer size, e.g. 8K [default: a quarter of L1d]
    #[arg(long, value_parser = parse_bytes)]
    lambda: Option<usize>,
    /// Shared buffer size [default: a quarter of L1d]
    #[arg(long, value_parser = parse_bytes)]
    sigma: Option<usize>,
    /// CPU of the synchronization core [default: MBS_SYNC_CORES or the last CPU]
    #[arg(long)]
    sync_core: Option<usize>,
    #[arg(long, default_value_t = 64)]
    cache_line: usize,
    /// Count cache events across each critical section.
    #[arg(long)]
    counters: bool,
    #[arg(long, value_parser = parse_event, default_value = "cache-references")]
    counter_event: CounterEvent,
    /// Fail instead of sharing CPUs between workers.
    #[arg(long)]
    strict_pinning: bool,
    /// Include warmup cycles in the statistics.
    #[arg(long)]
    keep_warmup: bool,
    /// Samples CSV [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    MbsPaper,
    MbsConservative,
    MbsReserved,
    SpinFifo,
    All,
}

impl ProtocolArg {
    fn protocols(self) -> Vec<Protocol> {
        match self {
            ProtocolArg::MbsPaper => vec![Protocol::MbsPaper],
            ProtocolArg::MbsConservative => vec![Protocol::MbsConservative],
            ProtocolArg::MbsReserved => vec![Protocol::MbsReserved],
            ProtocolArg::SpinFifo => vec![Protocol::SpinFifo],
            ProtocolArg::All => Protocol::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    taskset: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    protocol: ProtocolArg,
    /// Results CSV [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AdmissionArg {
    Priority,
    Fifo,
}

impl From<AdmissionArg> for AdmissionPolicy {
    fn from(a: AdmissionArg) -> Self {
        match a {
            AdmissionArg::Priority => AdmissionPolicy::Priority,
            AdmissionArg::Fifo => AdmissionPolicy::Fifo,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    taskset: PathBuf,
    #[arg(long, value_parser = parse_sim_protocol, default_value = "mbs")]
    protocol: SimProtocol,
    #[arg(long, value_enum, default_value = "priority")]
    admission: AdmissionArg,
    /// Migration cost per direction [default: the task set's delta]
    #[arg(long)]
    migration_cost: Option<u64>,
    /// Stop time [default: one hyperperiod]
    #[arg(long)]
    horizon: Option<u64>,
    /// Cache lines per resource.
    #[arg(long, default_value_t = 8)]
    lines: usize,
    #[arg(long, default_value_t = 0)]
    hit_cost: u64,
    #[arg(long, default_value_t = 0)]
    miss_cost: u64,
    #[arg(long, default_value_t = 512)]
    l1_lines: usize,
    /// Start with resource data cached at the synchronization cores.
    #[arg(long)]
    warm: bool,
    /// Event trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Summary CSV [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 1000)]
    sets: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    max_tasks: usize,
    #[arg(long, default_value_t = 3)]
    max_cores: usize,
    #[arg(long, default_value_t = 2)]
    max_resources: usize,
    #[arg(long, default_value_t = 2)]
    max_delta: u64,
    /// Also compare MBS against FIFO spinlocks on each checked set.
    #[arg(long)]
    compare_spin: bool,
    /// Findings CSV [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
        .map_err(|e: crate::bench::BenchError| e.to_string())
}

fn parse_bytes(s: &str) -> Result<usize, String> {
    parse_size(s).ok_or_else(|| format!("invalid size {s:?}"))
}

fn parse_event(s: &str) -> Result<CounterEvent, String> {
    s.parse()
        .map_err(|e: crate::bench::CounterError| e.to_string())
}

fn parse_sim_protocol(s: &str) -> Result<SimProtocol, String> {
    s.parse().map_err(|e: crate::sim::SimError| e.to_string())
}

/// Failure of a subcommand, carrying its exit code.
struct Failure(i32, String);

impl Failure {
    fn usage(m: impl ToString) -> Self {
        Failure(EXIT_USAGE, m.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::usage(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::usage(e)
    }
}

type Outcome = Result<i32, Failure>;

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_taskset(path: &Path) -> Result<TaskSet, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    parse_taskset(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::SoundnessFuzz(a) => fuzz(a),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn stats_line(name: &str, s: &LatencyStats) -> String {
    format!(
        "{name:<6} {:>8} {:>10} {:>10} {:>10} {:>10} {:>12.1} {:>12.1}",
        s.count, s.min, s.p50, s.p99, s.max, s.mean, s.stddev
    )
}

fn bench(a: BenchArgs) -> Outcome {
    let mut cfg = BenchConfig::new(a.variant);
    cfg.threads = a.threads.unwrap_or(cfg.threads);
    cfg.cycles = a.cycles;
    cfg.lambda_bytes = a.lambda.unwrap_or(cfg.lambda_bytes);
    cfg.sigma_bytes = a.sigma.unwrap_or(cfg.sigma_bytes);
    cfg.sync_core = a.sync_core;
    cfg.cache_line_bytes = a.cache_line;
    cfg.counters_enabled = a.counters;
    cfg.counter_event = a.counter_event;
    cfg.strict_pinning = a.strict_pinning;

    let out = run_benchmark(&cfg).map_err(Failure::usage)?;
    for w in out.warnings() {
        eprintln!("warning: {w}");
    }
    let all = out.samples();
    write_samples_csv(cfg.variant, &all, output(a.output.as_deref())?)?;

    let used = if a.keep_warmup {
        all
    } else {
        out.steady_samples()
    };
    if used.is_empty() {
        eprintln!("no samples after warmup; rerun with more cycles or --keep-warmup");
    } else {
        eprintln!(
            "{:<6} {:>8} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12}",
            "ns", "count", "min", "p50", "p99", "max", "mean", "stddev"
        );
        for (name, field) in [("cycle", Field::Cycle), ("cs", Field::Cs)] {
            let s = compute_stats(&used, field).map_err(Failure::usage)?;
            eprintln!("{}", stats_line(name, &s));
        }
        let counts: Vec<u64> = used
            .iter()
            .filter_map(|s| s.shared_cache_accesses)
            .collect();
        if !counts.is_empty() {
            let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
            eprintln!("{}: {mean:.1} per critical section", cfg.counter_event);
        }
    }
    if !out.shared_intact(&cfg) {
        eprintln!("shared buffer lost updates: {:?}", out.shared_final);
        return Ok(EXIT_VIOLATION);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct AnalyzeRow {
    protocol: &'static str,
    task: u32,
    priority: i64,
    processor: usize,
    response_time: u64,
    b_local: u64,
    b_remote: u64,
    iterations: u32,
    schedulable: bool,
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let ts = load_taskset(&a.taskset)?;
    let mut w = csv::Writer::from_writer(output(a.output.as_deref())?);
    for protocol in a.protocol.protocols() {
        let report = schedulability_test(&ts, protocol).map_err(Failure::usage)?;
        for r in &report.results {
            let task = ts
                .tasks
                .iter()
                .find(|t| t.id == r.task)
                .expect("analyzed task");
            w.serialize(AnalyzeRow {
                protocol: protocol.name(),
                task: r.task,
                priority: task.priority,
                processor: task.processor,
                response_time: r.response_time,
                b_local: r.b_local,
                b_remote: r.b_remote,
                iterations: r.iterations,
                schedulable: r.schedulable,
            })?;
        }
        eprintln!(
            "{}: {}",
            protocol.name(),
            if report.schedulable {
                "schedulable"
            } else {
                "not schedulable"
            }
        );
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn simulate_cmd(a: SimulateArgs) -> Outcome {
    let ts = load_taskset(&a.taskset)?;
    let cache = CacheModel {
        default_lines: a.lines,
        hit_cost: a.hit_cost,
        miss_cost: a.miss_cost,
        l1_capacity_lines: a.l1_lines,
        warm_sync_cores: a.warm,
        ..CacheModel::default()
    };
    let mut params = SimParams::new(a.protocol)
        .with_admission(a.admission.into())
        .with_cache(cache);
    params.migration_cost = a.migration_cost;
    params.horizon = a.horizon;
    let trace = simulate(&ts, &params).map_err(Failure::usage)?;
    if let Some(p) = &a.trace {
        trace.write_events_csv(output(Some(p))?)?;
    }
    let rows = summary_rows(&ts, &trace).map_err(Failure::usage)?;
    write_summary_csv(&rows, output(a.output.as_deref())?)?;

    let observed = observed_response_times(&trace);
    let unfinished: Vec<u32> = observed
        .iter()
        .filter(|(_, o)| o.unfinished)
        .map(|(&t, _)| t)
        .collect();
    if !unfinished.is_empty() {
        eprintln!("tasks with a job unfinished at the horizon: {unfinished:?}");
    }
    // The analysis bounds MBS; a schedulable verdict it cannot back up is a violation.
    if a.protocol == SimProtocol::Mbs && params.migration_cost.is_none_or(|d| d <= ts.delta) {
        let cons = schedulability_test(&ts, Protocol::MbsConservative).map_err(Failure::usage)?;
        let exceeded = rows.iter().any(|r| {
            r.max_response
                .is_some_and(|m| m > r.analyzed_bound_conservative)
                || unfinished.contains(&r.task)
        });
        if cons.schedulable && a.hit_cost == 0 && a.miss_cost == 0 && exceeded {
            eprintln!("observed response exceeds the conservative bound");
            return Ok(EXIT_VIOLATION);
        }
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FindingRow {
    kind: &'static str,
    seed: u64,
    task: u32,
    observed: u64,
    bound: u64,
}

fn fuzz(a: FuzzArgs) -> Outcome {
    let cfg = FuzzConfig {
        sets: a.sets,
        seed: a.seed,
        max_tasks: a.max_tasks,
        max_cores: a.max_cores,
        max_resources: a.max_resources,
        max_delta: a.max_delta,
        ..FuzzConfig::default()
    };
    if cfg.max_tasks < 1 || cfg.max_cores < 1 {
        return Err(Failure::usage("need at least one task and one core"));
    }
    let report = soundness_fuzz(&cfg);
    let mut w = csv::Writer::from_writer(output(a.output.as_deref())?);
    let tagged = report.violations.iter().map(|f| ("violation", f)).chain(
        report
            .paper_exceedances
            .iter()
            .map(|f| ("paper-exceedance", f)),
    );
    let mut wrote = false;
    for (kind, f) in tagged {
        wrote = true;
        w.serialize(FindingRow {
            kind,
            seed: f.seed,
            task: f.task,
            observed: f.observed,
            bound: f.bound,
        })?;
    }
    if !wrote {
        w.write_record(["kind", "seed", "task", "observed", "bound"])?;
    }
    w.flush()?;
    eprintln!(
        "checked {} schedulable sets ({} generated): {} conservative-bound violations, {} per-request-bound exceedances",
        report.checked,
        report.attempts,
        report.violations.len(),
        report.paper_exceedances.len()
    );
    let mut code = if report.sound() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    };
    if report.checked < cfg.sets {
        eprintln!(
            "only {} of {} requested sets were schedulable",
            report.checked, cfg.sets
        );
    }

    if a.compare_spin {
        let mut mismatches = 0;
        let mut worse = Vec::new();
        for i in 0..cfg.sets {
            let mut ts = crate::sim::fuzz_taskset(cfg.seed.wrapping_add(i as u64), &cfg);
            ts.delta = 0;
            if !same_cs_sequence(&ts).map_err(Failure::usage)? {
                mismatches += 1;
            }
            if !worse_than_spin(&ts, AdmissionPolicy::Fifo)
                .map_err(Failure::usage)?
                .is_empty()
            {
                worse.push(ts);
            }
        }
        eprintln!(
            "{} sets: {mismatches} differ in critical-section order (reserving vs spinning), {} have a task slower under migration than under spinning",
            cfg.sets,
            worse.len()
        );
        if let Some(first) = worse.first() {
            let small = minimize(first, |t| {
                worse_than_spin(t, AdmissionPolicy::Fifo).is_ok_and(|v| !v.is_empty())
            });
            eprintln!("smallest example:\n{}", crate::analysis::to_toml(&small));
        }
        if mismatches > 0 || !worse.is_empty() {
            code = EXIT_VIOLATION;
        }
    }
    Ok(code)
}
