//! Response-time bounds of a small task set under each blocking analysis.

use mbs::analysis::{parse_taskset, schedulability_test, Protocol};

const TASKS: &str = r#"
[params]
delta = 1

[[resources]]
id = "queue"
sync_core = 2

[[tasks]]
id = 1
period = 20
wcet = 5
priority = 3
processor = 0
segments = [
  { type = "exec", duration = 2 },
  { type = "cs", resource = "queue", duration = 2 },
  { type = "exec", duration = 1 },
]

[[tasks]]
id = 2
period = 50
wcet = 12
priority = 2
processor = 0
segments = [
  { type = "exec", duration = 8 },
  { type = "cs", resource = "queue", duration = 4 },
]

[[tasks]]
id = 3
period = 40
wcet = 9
priority = 1
processor = 1
segments = [
  { type = "cs", resource = "queue", duration = 3 },
  { type = "exec", duration = 6 },
]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ts = parse_taskset(TASKS)?;
    println!(
        "{:<17} {:>4} {:>6} {:>8} {:>9}",
        "protocol", "task", "wcrt", "blocking", "verdict"
    );
    for p in Protocol::ALL {
        let rep = schedulability_test(&ts, p)?;
        for r in &rep.results {
            println!(
                "{:<17} {:>4} {:>6} {:>8} {:>9}",
                p.name(),
                r.task,
                r.response_time,
                r.b_local + r.b_remote,
                if r.schedulable { "ok" } else { "miss" }
            );
        }
    }
    Ok(())
}
