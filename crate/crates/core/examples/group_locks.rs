//! Resources that nest are merged into one group lock before analysis.

use mbs::analysis::{expand_group_locks, parse_taskset, schedulability_test, to_toml, Protocol};

const TASKS: &str = r#"
[[resources]]
id = "accounts"
sync_core = 4
group = "bank"

[[resources]]
id = "audit"
sync_core = 5
group = "bank"

[[tasks]]
id = 1
period = 30
wcet = 6
priority = 2
processor = 0
segments = [
  { type = "exec", duration = 1 },
  { type = "cs", resource = "accounts", duration = 2, segments = [
      { type = "cs", resource = "audit", duration = 1 },
  ] },
  { type = "exec", duration = 2 },
]

[[tasks]]
id = 2
period = 40
wcet = 4
priority = 1
processor = 1
segments = [{ type = "cs", resource = "audit", duration = 2 }, { type = "exec", duration = 2 }]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ts = parse_taskset(TASKS)?;
    let flat = expand_group_locks(&ts)?;
    println!("{}", to_toml(&flat));
    let rep = schedulability_test(&ts, Protocol::MbsPaper)?;
    for r in &rep.results {
        println!("task {}: response time {}", r.task, r.response_time);
    }
    Ok(())
}
