//! Discrete-event clock and the congestion-aware mock provider.
//!
//! The provider only exposes what a black-box API would: a completion (or a
//! timeout) per dispatched call. Everything the client steers on is derived
//! from those completions and from its own queues.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::RequestId;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration needs at least two points")]
    TooFewPoints,
    #[error("calibration points share a single token value; slope is undefined")]
    DegenerateX,
    #[error("calibration csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsMode {
    /// Fast desk-scale timings.
    Scaled,
    /// Per-token cost and overhead from the measured latency fit.
    Calibrated,
}

impl PhysicsMode {
    /// Factor that maps scaled-mode time constants (deadlines, timeout,
    /// backoff, horizon) onto this mode's clock.
    pub fn time_scale(self) -> f64 {
        match self {
            PhysicsMode::Scaled => 1.0,
            PhysicsMode::Calibrated => {
                Physics::calibrated_per_token() / Physics::scaled().per_token_ms
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub base_ms: f64,
    pub per_token_ms: f64,
    /// Slowdown gain applied to normalized excess in-flight work.
    pub alpha: f64,
    /// Concurrent calls served before slowdown kicks in.
    pub capacity: usize,
    pub timeout_ms: f64,
}

impl Physics {
    /// Desk-scale timings: a short call lands near 0.25 s unloaded.
    pub fn scaled() -> Self {
        Physics {
            base_ms: 200.0,
            per_token_ms: 2.0,
            alpha: 2.0,
            capacity: 8,
            timeout_ms: 120_000.0,
        }
    }

    fn calibrated_per_token() -> f64 {
        18.7
    }

    pub fn calibrated() -> Self {
        Physics {
            base_ms: 3294.0,
            per_token_ms: Physics::calibrated_per_token(),
            timeout_ms: 120_000.0 * PhysicsMode::Calibrated.time_scale(),
            ..Physics::scaled()
        }
    }

    pub fn for_mode(mode: PhysicsMode) -> Self {
        match mode {
            PhysicsMode::Scaled => Physics::scaled(),
            PhysicsMode::Calibrated => Physics::calibrated(),
        }
    }

    /// Latency of a call given the provider's in-flight count when it was sent.
    pub fn service_time(&self, tokens: u32, inflight_at_dispatch: usize) -> f64 {
        let cap = self.capacity as f64;
        let excess = ((inflight_at_dispatch as f64 - cap) / cap).max(0.0);
        (self.base_ms + self.per_token_ms * tokens as f64) * (1.0 + self.alpha * excess)
    }
}

/// Event queue ordered by `(time, insertion sequence)`.
#[derive(Debug)]
pub struct SimClock<E> {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<Scheduled<E>>,
}

#[derive(Debug)]
struct Scheduled<E> {
    at: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        SimClock {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn schedule(&mut self, at: f64, event: E) {
        assert!(
            at >= self.now,
            "event scheduled in the past ({at} < {})",
            self.now
        );
        self.heap.push(Scheduled {
            at,
            seq: self.next_seq,
            event,
        });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        let s = self.heap.pop()?;
        debug_assert!(s.at >= self.now);
        self.now = s.at;
        Some((s.at, s.event))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.at)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    TimedOut,
}

/// What the provider promises for a dispatched call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ticket {
    pub id: RequestId,
    pub finish_ms: f64,
    pub outcome: Outcome,
    pub inflight_at_dispatch: usize,
}

/// Mock black-box provider state.
#[derive(Debug, Clone)]
pub struct Provider {
    pub physics: Physics,
    inflight: BTreeSet<RequestId>,
    dispatched: usize,
    finished: usize,
}

impl Provider {
    pub fn new(physics: Physics) -> Self {
        Provider {
            physics,
            inflight: BTreeSet::new(),
            dispatched: 0,
            finished: 0,
        }
    }

    pub fn inflight(&self) -> usize {
        self.inflight.len()
    }

    pub fn dispatched(&self) -> usize {
        self.dispatched
    }

    pub fn finished(&self) -> usize {
        self.finished
    }

    /// Accepts a call at `at`. Calls that would outlive the timeout are cut at
    /// `at + timeout_ms`.
    pub fn dispatch(&mut self, id: RequestId, tokens: u32, at: f64) -> Ticket {
        let inflight_at_dispatch = self.inflight.len();
        assert!(self.inflight.insert(id), "request {id} dispatched twice");
        self.dispatched += 1;
        let latency = self.physics.service_time(tokens, inflight_at_dispatch);
        let (finish_ms, outcome) = if latency > self.physics.timeout_ms {
            (at + self.physics.timeout_ms, Outcome::TimedOut)
        } else {
            (at + latency, Outcome::Completed)
        };
        Ticket {
            id,
            finish_ms,
            outcome,
            inflight_at_dispatch,
        }
    }

    pub fn finish(&mut self, id: RequestId) {
        assert!(
            self.inflight.remove(&id),
            "request {id} finished but was not in flight"
        );
        self.finished += 1;
    }
}

/// Client-visible congestion signals, each normalized into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observables {
    pub provider_load: f64,
    pub queue_pressure: f64,
    pub tail_latency_ratio: f64,
}

impl Observables {
    pub fn new(provider_load: f64, queue_pressure: f64, tail_latency_ratio: f64) -> Self {
        Observables {
            provider_load: provider_load.clamp(0.0, 1.0),
            queue_pressure: queue_pressure.clamp(0.0, 1.0),
            tail_latency_ratio: tail_latency_ratio.clamp(0.0, 1.0),
        }
    }
}

/// Recent completion latencies the client has observed: at most `capacity`
/// entries, none older than `span_ms`.
#[derive(Debug, Clone)]
pub struct LatencyWindow {
    capacity: usize,
    span_ms: f64,
    recent: VecDeque<(f64, f64)>,
}

impl LatencyWindow {
    pub fn new(capacity: usize, span_ms: f64) -> Self {
        LatencyWindow {
            capacity: capacity.max(1),
            span_ms,
            recent: VecDeque::with_capacity(capacity),
        }
    }

    pub fn record(&mut self, now: f64, latency_ms: f64) {
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back((now, latency_ms));
    }

    pub fn p95(&self, now: f64) -> Option<f64> {
        let values: Vec<f64> = self
            .recent
            .iter()
            .filter(|(t, _)| now - t <= self.span_ms)
            .map(|(_, l)| *l)
            .collect();
        crate::metrics::percentile(&values, 0.95)
    }
}

/// Count-weighted bucket summary used for the latency fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub mean_tokens: f64,
    pub mean_latency_ms: f64,
    pub count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationFit {
    pub slope_ms_per_token: f64,
    pub intercept_ms: f64,
    pub r2: f64,
}

/// Weighted least squares line through bucket means (weights = counts).
pub fn fit_calibration(points: &[CalibrationPoint]) -> Result<CalibrationFit, CalibrationError> {
    if points.len() < 2 {
        return Err(CalibrationError::TooFewPoints);
    }
    let w_sum: f64 = points.iter().map(|p| p.count).sum();
    let x_mean = points.iter().map(|p| p.count * p.mean_tokens).sum::<f64>() / w_sum;
    let y_mean = points
        .iter()
        .map(|p| p.count * p.mean_latency_ms)
        .sum::<f64>()
        / w_sum;
    let sxx: f64 = points
        .iter()
        .map(|p| p.count * (p.mean_tokens - x_mean).powi(2))
        .sum();
    if sxx <= f64::EPSILON * w_sum * x_mean.abs().max(1.0) {
        return Err(CalibrationError::DegenerateX);
    }
    let sxy: f64 = points
        .iter()
        .map(|p| p.count * (p.mean_tokens - x_mean) * (p.mean_latency_ms - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_tot: f64 = points
        .iter()
        .map(|p| p.count * (p.mean_latency_ms - y_mean).powi(2))
        .sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| p.count * (p.mean_latency_ms - intercept - slope * p.mean_tokens).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(CalibrationFit {
        slope_ms_per_token: slope,
        intercept_ms: intercept,
        r2,
    })
}

/// One row of the calibration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub bucket: String,
    pub count: f64,
    pub mean_tokens: f64,
    pub std_tokens: f64,
    pub mean_latency_ms: f64,
    pub std_latency_ms: f64,
}

impl CalibrationRow {
    pub fn point(&self) -> CalibrationPoint {
        CalibrationPoint {
            mean_tokens: self.mean_tokens,
            mean_latency_ms: self.mean_latency_ms,
            count: self.count,
        }
    }
}

/// Reads `bucket,count,mean_tokens,std_tokens,mean_latency_ms,std_latency_ms`.
pub fn read_calibration_csv<R: Read>(reader: R) -> Result<Vec<CalibrationRow>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<CalibrationRow>, _>>()?;
    Ok(rows)
}

/// Bucket summary of the measured single-request latencies.
pub const MEASURED_CALIBRATION_CSV: &str = "\
bucket,count,mean_tokens,std_tokens,mean_latency_ms,std_latency_ms
medium,3,155,35,4916,608
long,5,670,259,14968,3950
xlong,10,2839,907,57251,16064
";

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64) -> Physics {
        Physics {
            base_ms: 50.0,
            per_token_ms: 0.5,
            alpha,
            capacity: 8,
            timeout_ms: 120_000.0,
        }
    }

    #[test]
    fn service_time_unloaded_and_at_capacity() {
        assert_eq!(params(2.0).service_time(100, 0), 100.0);
        assert_eq!(params(2.0).service_time(100, 8), 100.0);
        // one full capacity of excess triples the latency at alpha = 2
        assert_eq!(params(2.0).service_time(100, 16), 300.0);
    }

    #[test]
    fn calibrated_xlong_mean() {
        let t = Physics::calibrated().service_time(2839, 0);
        assert!((t - 56_383.3).abs() < 1e-6);
        assert!((t - 57_251.0).abs() < 16_064.0);
    }

    #[test]
    fn clock_orders_by_time_then_sequence() {
        let mut clock = SimClock::new();
        clock.schedule(5.0, "b");
        clock.schedule(1.0, "a");
        clock.schedule(5.0, "c");
        assert_eq!(clock.pop(), Some((1.0, "a")));
        assert_eq!(clock.pop(), Some((5.0, "b")));
        assert_eq!(clock.pop(), Some((5.0, "c")));
        assert_eq!(clock.pop(), None);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn clock_rejects_past_events() {
        let mut clock = SimClock::new();
        clock.schedule(5.0, ());
        clock.pop();
        clock.schedule(4.0, ());
    }

    #[test]
    fn dispatch_empty_system() {
        let mut p = Provider::new(params(2.0));
        let t = p.dispatch(1, 100, 0.0);
        assert_eq!(t.finish_ms, 100.0);
        assert_eq!(t.outcome, Outcome::Completed);
        assert_eq!(p.inflight(), 1);
        p.finish(1);
        assert_eq!(p.inflight(), 0);
    }

    #[test]
    fn dispatch_past_timeout() {
        // 50 + 0.5 * 399_900 = 200_000 ms
        let mut p = Provider::new(params(2.0));
        let t = p.dispatch(7, 399_900, 0.0);
        assert_eq!(t.outcome, Outcome::TimedOut);
        assert_eq!(t.finish_ms, 120_000.0);
    }

    #[test]
    fn same_tick_dispatches_complete_in_insertion_order() {
        let mut p = Provider::new(params(0.0));
        let mut clock = SimClock::new();
        for id in [3u32, 1, 2] {
            let t = p.dispatch(id, 100, 0.0);
            clock.schedule(t.finish_ms, t.id);
        }
        let order: Vec<_> = std::iter::from_fn(|| clock.pop().map(|(_, id)| id)).collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn fit_exact_line() {
        let pts = [
            CalibrationPoint {
                mean_tokens: 0.0,
                mean_latency_ms: 0.0,
                count: 1.0,
            },
            CalibrationPoint {
                mean_tokens: 1.0,
                mean_latency_ms: 1.0,
                count: 1.0,
            },
        ];
        let fit = fit_calibration(&pts).unwrap();
        assert!((fit.slope_ms_per_token - 1.0).abs() < 1e-12);
        assert!(fit.intercept_ms.abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_degenerate() {
        let p = CalibrationPoint {
            mean_tokens: 3.0,
            mean_latency_ms: 1.0,
            count: 2.0,
        };
        assert!(matches!(
            fit_calibration(&[p, p]),
            Err(CalibrationError::DegenerateX)
        ));
        assert!(matches!(
            fit_calibration(&[p]),
            Err(CalibrationError::TooFewPoints)
        ));
    }

    #[test]
    fn measured_table_parses() {
        let rows = read_calibration_csv(MEASURED_CALIBRATION_CSV.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].bucket, "xlong");
        assert_eq!(rows[2].count, 10.0);
    }

    #[test]
    fn observables_clamp() {
        let o = Observables::new(1.5, -0.2, 0.3);
        assert_eq!(
            o,
            Observables {
                provider_load: 1.0,
                queue_pressure: 0.0,
                tail_latency_ratio: 0.3
            }
        );
    }

    #[test]
    fn latency_window_rolls() {
        let mut w = LatencyWindow::new(3, 100.0);
        assert_eq!(w.p95(0.0), None);
        for v in [10.0, 20.0, 30.0, 40.0] {
            w.record(0.0, v);
        }
        assert_eq!(w.p95(0.0), Some(40.0));
        w.record(50.0, 1.0);
        w.record(50.0, 2.0);
        w.record(50.0, 3.0);
        assert_eq!(w.p95(50.0), Some(3.0));
        // everything ages out
        assert_eq!(w.p95(151.0), None);
    }
}
