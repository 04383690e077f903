use alloc::vec::Vec;

use super::loadgen::LatencySample;

/// Width of the time buckets in a summary.
pub const BUCKET_MS: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct BucketSummary {
    pub start_ms: u64,
    pub count: usize,
    pub errors: usize,
    pub p50: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub errors: usize,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    pub buckets: Vec<BucketSummary>,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ceil_f64(p / 100.0 * n as f64) as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

fn ceil_f64(x: f64) -> f64 {
    let t = x as i64 as f64;
    if t < x {
        t + 1.0
    } else {
        t
    }
}

fn ok_latencies<'a>(samples: impl Iterator<Item = &'a LatencySample>) -> Vec<f64> {
    let mut v: Vec<f64> = samples.filter(|s| s.status.is_ok()).map(|s| s.latency_ms).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Percentiles cover successful requests only; failed ones are counted in
/// `errors`.
pub fn summarize(samples: &[LatencySample]) -> Summary {
    let all = ok_latencies(samples.iter());
    let mut buckets: Vec<BucketSummary> = Vec::new();
    if let Some(last) = samples.iter().map(|s| s.t_ms).max() {
        for b in 0..=last / BUCKET_MS {
            let start = b * BUCKET_MS;
            let inside = || samples.iter().filter(move |s| s.t_ms / BUCKET_MS == b);
            let lat = ok_latencies(inside());
            buckets.push(BucketSummary {
                start_ms: start,
                count: inside().count(),
                errors: inside().filter(|s| !s.status.is_ok()).count(),
                p50: percentile_nearest_rank(&lat, 50.0),
            });
        }
    }
    Summary {
        count: samples.len(),
        errors: samples.iter().filter(|s| !s.status.is_ok()).count(),
        p50: percentile_nearest_rank(&all, 50.0),
        p95: percentile_nearest_rank(&all, 95.0),
        p99: percentile_nearest_rank(&all, 99.0),
        buckets,
    }
}
