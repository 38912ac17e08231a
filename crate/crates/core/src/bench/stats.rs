use serde::Serialize;

use super::config::BenchError;
use super::run::LatencySample;

/// Which latency of a sample to summarize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Cycle,
    Cs,
}

impl Field {
    pub fn of(self, s: &LatencySample) -> u64 {
        match self {
            Field::Cycle => s.cycle_ns,
            Field::Cs => s.cs_ns,
        }
    }
}

/// Histogram bucket `[lo, hi)`; bounds are powers of two (the first starts at 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub lo: u64,
    pub hi: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub min: u64,
    pub p50: u64,
    pub p99: u64,
    pub max: u64,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub histogram: Vec<Bucket>,
}

/// Nearest-rank percentile of sorted data: the value at rank `ceil(p/100 * n)`.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn bucket_of(v: u64) -> u32 {
    if v == 0 {
        0
    } else {
        64 - v.leading_zeros()
    }
}

fn bucket_bounds(b: u32) -> (u64, u64) {
    match b {
        0 => (0, 1),
        64 => (1 << 63, u64::MAX),
        _ => (1 << (b - 1), 1 << b),
    }
}

pub fn stats_of(values: &[u64]) -> Result<LatencyStats, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = sorted
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let (first, last) = (bucket_of(sorted[0]), bucket_of(sorted[n - 1]));
    let mut histogram: Vec<Bucket> = (first..=last)
        .map(|b| {
            let (lo, hi) = bucket_bounds(b);
            Bucket { lo, hi, count: 0 }
        })
        .collect();
    for &v in &sorted {
        histogram[(bucket_of(v) - first) as usize].count += 1;
    }
    Ok(LatencyStats {
        count: n,
        min: sorted[0],
        p50: percentile(&sorted, 50.0),
        p99: percentile(&sorted, 99.0),
        max: sorted[n - 1],
        mean,
        stddev: var.sqrt(),
        histogram,
    })
}

/// Summarizes one latency field of `samples`.
pub fn compute_stats(samples: &[LatencySample], field: Field) -> Result<LatencyStats, BenchError> {
    let values: Vec<u64> = samples.iter().map(|s| field.of(s)).collect();
    stats_of(&values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_values() {
        let s = stats_of(&[3, 1, 2]).unwrap();
        assert_eq!((s.min, s.p50, s.max), (1, 2, 3));
        assert_eq!(s.count, 3);
    }

    #[test]
    fn singleton() {
        let s = stats_of(&[5]).unwrap();
        assert_eq!((s.min, s.p50, s.p99, s.max), (5, 5, 5, 5));
        assert_eq!(
            s.histogram,
            vec![Bucket {
                lo: 4,
                hi: 8,
                count: 1
            }]
        );
    }

    #[test]
    fn constant_input() {
        let s = stats_of(&[42; 100]).unwrap();
        assert_eq!(s.mean, 42.0);
        assert_eq!(s.stddev, 0.0);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 99.0), 99);
        assert_eq!(percentile(&v, 100.0), 100);
        assert_eq!(percentile(&v, 0.0), 1);
        let v: Vec<u64> = (1..=10).collect();
        assert_eq!(percentile(&v, 99.0), 10);
    }

    #[test]
    fn histogram_covers_range() {
        let s = stats_of(&[0, 1, 7, 8, 1000]).unwrap();
        assert_eq!(s.histogram.first().unwrap().lo, 0);
        assert!(s.histogram.last().unwrap().hi > 1000);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<u64>(), 5);
        let s = stats_of(&[u64::MAX]).unwrap();
        assert_eq!(s.histogram[0].count, 1);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(stats_of(&[]), Err(BenchError::Empty)));
    }
}
