//! Joint metrics for a run and their aggregation across seeds.
//!
//! Undefined values (a tail over zero completions, a ratio with an empty
//! denominator) are `None` and never collapse to zero.

use serde::Serialize;

use crate::scheduler::{RequestOutcome, RunLog};
use crate::workload::{Bucket, Class};

/// Nearest-rank percentile: the value at rank `ceil(p * n)` of the sorted list.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    // guard against p * n landing a hair above an integer
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub arrived: usize,
    pub completed: usize,
    pub rejected: usize,
    pub timed_out: usize,
    pub incomplete: usize,
    pub short_p95_ms: Option<f64>,
    pub short_p90_ms: Option<f64>,
    /// Over completed long and xlong requests.
    pub long_p90_ms: Option<f64>,
    pub global_p95_ms: Option<f64>,
    pub global_p90_ms: Option<f64>,
    pub latency_std_ms: Option<f64>,
    pub makespan_ms: f64,
    pub completion_rate: Option<f64>,
    pub deadline_satisfaction: Option<f64>,
    /// Deadline-meeting completions per second of makespan.
    pub useful_goodput: f64,
    pub rejects_by_bucket: [usize; 4],
    pub defers_by_bucket: [usize; 4],
}

impl RunSummary {
    pub fn total_rejects(&self) -> usize {
        self.rejects_by_bucket.iter().sum()
    }

    pub fn total_defers(&self) -> usize {
        self.defers_by_bucket.iter().sum()
    }

    /// Flat `(name, value)` view in the fixed column order used by the harness.
    pub fn metrics(&self) -> Vec<(&'static str, MetricKind, Option<f64>)> {
        use MetricKind::*;
        let mut out = vec![
            ("short_p95_ms", Millis, self.short_p95_ms),
            ("short_p90_ms", Millis, self.short_p90_ms),
            ("long_p90_ms", Millis, self.long_p90_ms),
            ("global_p95_ms", Millis, self.global_p95_ms),
            ("global_p90_ms", Millis, self.global_p90_ms),
            ("latency_std_ms", Millis, self.latency_std_ms),
            ("makespan_ms", Millis, Some(self.makespan_ms)),
            ("completion_rate", Fraction, self.completion_rate),
            (
                "deadline_satisfaction",
                Fraction,
                self.deadline_satisfaction,
            ),
            ("useful_goodput", Rate, Some(self.useful_goodput)),
            ("rejects", Count, Some(self.total_rejects() as f64)),
            ("defers", Count, Some(self.total_defers() as f64)),
            ("timeouts", Count, Some(self.timed_out as f64)),
        ];
        for b in Bucket::ALL {
            out.push((
                reject_col(b),
                Count,
                Some(self.rejects_by_bucket[b.index()] as f64),
            ));
        }
        for b in Bucket::ALL {
            out.push((
                defer_col(b),
                Count,
                Some(self.defers_by_bucket[b.index()] as f64),
            ));
        }
        out
    }
}

fn reject_col(b: Bucket) -> &'static str {
    match b {
        Bucket::Short => "rejects_short",
        Bucket::Medium => "rejects_medium",
        Bucket::Long => "rejects_long",
        Bucket::XLong => "rejects_xlong",
    }
}

fn defer_col(b: Bucket) -> &'static str {
    match b {
        Bucket::Short => "defers_short",
        Bucket::Medium => "defers_medium",
        Bucket::Long => "defers_long",
        Bucket::XLong => "defers_xlong",
    }
}

/// Controls output precision for a metric column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricKind {
    Millis,
    Fraction,
    Rate,
    Count,
}

pub fn summarize(log: &RunLog) -> RunSummary {
    let mut rejects_by_bucket = [0usize; 4];
    let mut defers_by_bucket = [0usize; 4];
    let (mut completed, mut rejected, mut timed_out, mut incomplete, mut met) = (0, 0, 0, 0, 0);
    let mut all = Vec::new();
    let mut short = Vec::new();
    let mut long = Vec::new();
    let mut first_arrival = f64::INFINITY;
    let mut last_completion = f64::NEG_INFINITY;

    for r in &log.records {
        first_arrival = first_arrival.min(r.arrival_ms);
        defers_by_bucket[r.bucket.index()] += r.defers as usize;
        match r.outcome {
            RequestOutcome::Completed => {
                completed += 1;
                let finish = r.finish_ms.expect("completed request has a finish time");
                let latency = finish - r.arrival_ms;
                last_completion = last_completion.max(finish);
                if finish <= r.deadline_ms {
                    met += 1;
                }
                all.push(latency);
                if r.bucket == Bucket::Short {
                    short.push(latency);
                }
                if r.bucket.class() == Class::Heavy {
                    long.push(latency);
                }
            }
            RequestOutcome::Rejected => {
                rejected += 1;
                rejects_by_bucket[r.bucket.index()] += 1;
            }
            RequestOutcome::TimedOut => timed_out += 1,
            RequestOutcome::Incomplete => incomplete += 1,
        }
    }

    let arrived = log.records.len();
    let makespan_ms = if completed > 0 {
        (last_completion - first_arrival).max(0.0)
    } else {
        0.0
    };
    let admitted = arrived - rejected;
    let useful_goodput = if makespan_ms > 0.0 {
        met as f64 / (makespan_ms / 1000.0)
    } else {
        0.0
    };
    RunSummary {
        arrived,
        completed,
        rejected,
        timed_out,
        incomplete,
        short_p95_ms: percentile(&short, 0.95),
        short_p90_ms: percentile(&short, 0.90),
        long_p90_ms: percentile(&long, 0.90),
        global_p95_ms: percentile(&all, 0.95),
        global_p90_ms: percentile(&all, 0.90),
        latency_std_ms: sample_std(&all),
        makespan_ms,
        completion_rate: (admitted > 0).then(|| completed as f64 / admitted as f64),
        deadline_satisfaction: (completed > 0).then(|| met as f64 / completed as f64),
        useful_goodput,
        rejects_by_bucket,
        defers_by_bucket,
    }
}

fn sample_std(values: &[f64]) -> Option<f64> {
    Moments::of(values.iter().copied()).map(|m| m.std)
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Moments {
    /// Welford's update; `None` for an empty input.
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Option<Moments> {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in values {
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
        }
        if n == 0 {
            return None;
        }
        let std = if n > 1 {
            (m2 / (n - 1) as f64).max(0.0).sqrt()
        } else {
            0.0
        };
        Some(Moments { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Seeds that contributed a defined value.
    pub n: usize,
    /// Seeds whose value was undefined.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub runs: usize,
    pub stats: Vec<(&'static str, MetricKind, Stat)>,
}

impl CellSummary {
    pub fn get(&self, name: &str) -> Option<&Stat> {
        self.stats
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, _, s)| s)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|s| s.mean)
    }
}

pub fn aggregate(runs: &[RunSummary]) -> CellSummary {
    assert!(!runs.is_empty(), "aggregate needs at least one run");
    let columns = runs[0].metrics();
    let stats = columns
        .iter()
        .enumerate()
        .map(|(i, (name, kind, _))| {
            let values: Vec<Option<f64>> = runs.iter().map(|r| r.metrics()[i].2).collect();
            let defined: Vec<f64> = values.iter().flatten().copied().collect();
            let excluded = values.len() - defined.len();
            let m = Moments::of(defined.iter().copied());
            (
                *name,
                *kind,
                Stat {
                    mean: m.map(|m| m.mean),
                    std: m.map(|m| m.std),
                    n: defined.len(),
                    excluded,
                },
            )
        })
        .collect();
    CellSummary {
        runs: runs.len(),
        stats,
    }
}
