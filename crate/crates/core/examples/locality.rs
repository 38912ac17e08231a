//! Cache misses inside critical sections when three cores share one resource.

use mbs::analysis::{ResourceSpec, Segment, TaskSet, TaskSpec};
use mbs::sim::{simulate, CacheModel, SimParams, SimProtocol};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = (0..3u32)
        .map(|i| TaskSpec {
            id: i + 1,
            period: 20 << i,
            wcet: 4,
            priority: 3 - i64::from(i),
            processor: i as usize,
            segments: vec![Segment::exec(1), Segment::cs("table", 3)],
        })
        .collect();
    let ts = TaskSet::new(
        tasks,
        vec![ResourceSpec {
            id: "table".into(),
            sync_core: 3,
            group: None,
        }],
        0,
    );
    println!(
        "{:<10} {:>12} {:>12}",
        "protocol", "fits in L1", "exceeds L1"
    );
    for p in SimProtocol::ALL {
        let misses = |lines| {
            let cache = CacheModel {
                default_lines: lines,
                l1_capacity_lines: 64,
                ..CacheModel::default()
            };
            simulate(&ts, &SimParams::new(p).with_cache(cache)).map(|t| t.steady_state_misses(1))
        };
        println!("{:<10} {:>12} {:>12}", p.name(), misses(16)?, misses(128)?);
    }
    Ok(())
}
