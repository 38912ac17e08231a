//! Seeded random task sets for fuzzing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{AnalysisError, ResourceSpec, Segment, TaskSet, TaskSpec, Time};

/// Candidate periods; their least common multiple is 2000.
pub const PERIODS: [Time; 8] = [100, 125, 200, 250, 400, 500, 1000, 2000];

/// Per-task utilizations that sum to `total` (UUniFast).
fn uunifast(rng: &mut ChaCha8Rng, n: usize, total: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut sum = total;
    for i in 1..n {
        let next = sum * rng.gen::<f64>().powf(1.0 / (n - i) as f64);
        out.push(sum - next);
        sum = next;
    }
    if n > 0 {
        out.push(sum);
    }
    out
}

/// Draws a task set deterministically from `seed`.
///
/// `utilization` is the total over all tasks. Tasks go to the least loaded
/// application core (cores `0..n_cores`); resource `R{k}` is served by core
/// `n_cores + k`. Each task gets up to two critical sections, each at most a
/// fifth of its WCET, and rate-monotonic priorities.
pub fn generate_taskset(
    seed: u64,
    n_tasks: usize,
    n_cores: usize,
    n_resources: usize,
    utilization: f64,
) -> Result<TaskSet, AnalysisError> {
    if !(utilization.is_finite() && utilization > 0.0) {
        return Err(AnalysisError::Invalid(format!(
            "utilization target must be positive, got {utilization}"
        )));
    }
    if n_cores == 0 {
        return Err(AnalysisError::Invalid("need at least one core".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utils = uunifast(&mut rng, n_tasks, utilization);
    let resources: Vec<ResourceSpec> = (0..n_resources)
        .map(|k| ResourceSpec {
            id: format!("R{k}"),
            sync_core: n_cores + k,
            group: None,
        })
        .collect();

    let mut load = vec![0.0f64; n_cores];
    let mut tasks = Vec::with_capacity(n_tasks);
    for (i, u) in utils.into_iter().enumerate() {
        let period = *PERIODS.choose(&mut rng).expect("non-empty");
        let wcet = ((u * period as f64).round() as Time).max(1);
        let max_cs = wcet / 5;
        let n_cs = if n_resources == 0 || max_cs == 0 {
            0
        } else {
            rng.gen_range(0..=2)
        };
        let cs: Vec<(String, Time)> = (0..n_cs)
            .map(|_| {
                let r = rng.gen_range(0..n_resources);
                (format!("R{r}"), rng.gen_range(1..=max_cs))
            })
            .collect();
        let exec_total = wcet - cs.iter().map(|c| c.1).sum::<Time>();
        let mut cuts: Vec<Time> = (0..n_cs).map(|_| rng.gen_range(0..=exec_total)).collect();
        cuts.sort_unstable();
        cuts.push(exec_total);
        let mut segments = Vec::new();
        let mut prev = 0;
        for (k, cut) in cuts.into_iter().enumerate() {
            if cut > prev {
                segments.push(Segment::exec(cut - prev));
            }
            prev = cut;
            if let Some((r, d)) = cs.get(k) {
                segments.push(Segment::cs(r.clone(), *d));
            }
        }
        let core = (0..n_cores)
            .min_by(|&a, &b| load[a].total_cmp(&load[b]))
            .expect("n_cores > 0");
        load[core] += wcet as f64 / period as f64;
        tasks.push(TaskSpec {
            id: i as u32 + 1,
            period,
            wcet,
            priority: 0,
            processor: core,
            segments,
        });
    }
    let mut rank: Vec<usize> = (0..tasks.len()).collect();
    rank.sort_by_key(|&i| (tasks[i].period, tasks[i].id));
    let n = tasks.len() as i64;
    for (r, &i) in rank.iter().enumerate() {
        tasks[i].priority = n - r as i64;
    }
    Ok(TaskSet::new(tasks, resources, 0))
}
