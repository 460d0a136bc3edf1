//! Scenario configuration and its validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationConfig;
use crate::ordering::OrderingWeights;
use crate::overload::{Backoff, OverloadConfig};
use crate::provider::{Physics, PhysicsMode};
use crate::workload::{Bucket, Congestion, InformationLevel, Regime, WorkloadConfig};

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// FIFO, every arrival sent immediately.
    DirectNaive,
    /// Static per-class in-flight quotas, FIFO per class.
    QuotaTiered,
    /// Adaptive DRR plus heavy-lane ordering, no admission control.
    AdaptiveDrr,
    /// Adaptive DRR, ordering and overload control.
    FinalOlc,
    /// Round-robin allocation plus heavy-lane ordering, no admission control.
    FairQueuingRr,
    /// Interactive-first allocation plus heavy-lane ordering, no admission control.
    ShortPriority,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::DirectNaive,
        Strategy::QuotaTiered,
        Strategy::AdaptiveDrr,
        Strategy::FinalOlc,
        Strategy::FairQueuingRr,
        Strategy::ShortPriority,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::DirectNaive => "direct_naive",
            Strategy::QuotaTiered => "quota_tiered",
            Strategy::AdaptiveDrr => "adaptive_drr",
            Strategy::FinalOlc => "final_adrr_olc",
            Strategy::FairQueuingRr => "fair_queuing",
            Strategy::ShortPriority => "short_priority",
        }
    }

    pub fn overload_enabled(self) -> bool {
        self == Strategy::FinalOlc
    }

    /// Runs that stop at the horizon instead of draining.
    pub fn horizon_cut(self) -> bool {
        matches!(self, Strategy::DirectNaive | Strategy::QuotaTiered)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Where the request sizes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSource {
    Regime {
        regime: Regime,
    },
    /// Explicit bucket proportions `[short, medium, long, xlong]`.
    Mix {
        proportions: [f64; 4],
        congestion: Congestion,
    },
    /// Token counts resampled (with replacement) from a one-column file.
    Trace {
        path: PathBuf,
        congestion: Congestion,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Interactive share of provider capacity under quota tiering.
    pub quota_interactive_share: f64,
    /// Cut-off for horizon-limited strategies.
    pub horizon_ms: f64,
    /// Completions kept for the tail-latency signal.
    pub latency_window: usize,
    /// Completions older than this no longer feed the tail-latency signal.
    pub latency_window_ms: f64,
    /// Queue pressure saturates at this many quanta of queued estimated tokens.
    pub pressure_ref_quanta: f64,
    /// Tail signal saturates at this multiple of the short deadline.
    pub tail_ref_short_deadlines: f64,
    /// Release heavy requests by score (`false` keeps the heavy lane FIFO).
    pub heavy_ordering: bool,
    /// Pins severity to a constant (diagnostics only).
    pub severity_override: Option<f64>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            quota_interactive_share: 0.6,
            horizon_ms: 90_000.0,
            latency_window: 32,
            latency_window_ms: 10_000.0,
            pressure_ref_quanta: 8.0,
            tail_ref_short_deadlines: 8.0,
            heavy_ordering: true,
            severity_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub workload: WorkloadSource,
    pub strategy: Strategy,
    pub information: InformationLevel,
    pub noise: f64,
    pub seed: u64,
    pub n: usize,
    pub physics_mode: PhysicsMode,
    pub physics: Physics,
    pub stream: WorkloadConfig,
    pub allocation: AllocationConfig,
    pub ordering: OrderingWeights,
    pub overload: OverloadConfig,
    pub scheduler: SchedulerConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            workload: WorkloadSource::Regime {
                regime: Regime::ALL[1],
            },
            strategy: Strategy::FinalOlc,
            information: InformationLevel::Coarse,
            noise: 0.0,
            seed: 0,
            n: 200,
            physics_mode: PhysicsMode::Scaled,
            physics: Physics::scaled(),
            stream: WorkloadConfig::default(),
            allocation: AllocationConfig::default(),
            ordering: OrderingWeights::default(),
            overload: OverloadConfig::default(),
            scheduler: SchedulerConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Defaults for a physics mode, with every time constant stretched to its clock.
    pub fn for_physics(mode: PhysicsMode) -> Self {
        let k = mode.time_scale();
        let base = ScenarioConfig::default();
        ScenarioConfig {
            physics_mode: mode,
            physics: Physics::for_mode(mode),
            stream: WorkloadConfig {
                deadlines: base.stream.deadlines.scaled(k),
                ..base.stream
            },
            overload: OverloadConfig {
                backoff: Backoff {
                    base_ms: base.overload.backoff.base_ms * k,
                    cap_ms: base.overload.backoff.cap_ms * k,
                },
                ..base.overload
            },
            scheduler: SchedulerConfig {
                horizon_ms: base.scheduler.horizon_ms * k,
                latency_window_ms: base.scheduler.latency_window_ms * k,
                ..base.scheduler
            },
            ..base
        }
    }

    /// Collects every violation rather than stopping at the first. Checks are
    /// written as negated comparisons so NaN fails them.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let p = &self.overload.policy;
        if !(p.t1 > 0.0) {
            errs.push(format!("0 < t1 violated (t1 = {})", p.t1));
        }
        if !(p.t1 < p.t2) {
            errs.push(format!("t1 < t2 violated (t1 = {}, t2 = {})", p.t1, p.t2));
        }
        if !(p.t2 < p.t3) {
            errs.push(format!("t2 < t3 violated (t2 = {}, t3 = {})", p.t2, p.t3));
        }
        if !(p.t3 < 1.0) {
            errs.push(format!("t3 < 1 violated (t3 = {})", p.t3));
        }
        let sw = &self.overload.weights;
        for (name, v) in [("load", sw.load), ("queue", sw.queue), ("tail", sw.tail)] {
            if !(v >= 0.0) {
                errs.push(format!("overload.weights.{name} must be >= 0 (got {v})"));
            }
        }
        if !(sw.load + sw.queue + sw.tail > 0.0) {
            errs.push("overload.weights must not all be zero".to_string());
        }
        let b = &self.overload.backoff;
        if !(b.base_ms > 0.0) || !(b.cap_ms >= b.base_ms) {
            errs.push(format!(
                "backoff needs 0 < base <= cap (base = {}, cap = {})",
                b.base_ms, b.cap_ms
            ));
        }
        let o = &self.ordering;
        for (name, v) in [("w1", o.w1), ("w2", o.w2), ("w3", o.w3)] {
            if !(v >= 0.0) {
                errs.push(format!("ordering.{name} must be >= 0 (got {v})"));
            }
        }
        if !(o.ref_tokens > 0.0) {
            errs.push(format!("ordering.ref must be > 0 (got {})", o.ref_tokens));
        }
        let a = &self.allocation;
        if !(a.quantum > 0.0) {
            errs.push(format!(
                "allocation.quantum must be > 0 (got {})",
                a.quantum
            ));
        }
        if a.weights.iter().any(|w| !(*w > 0.0)) {
            errs.push(format!(
                "allocation.weights must be > 0 (got {:?})",
                a.weights
            ));
        }
        if !(a.gamma >= 0.0) {
            errs.push(format!("allocation.gamma must be >= 0 (got {})", a.gamma));
        }
        if !(0.0..1.0).contains(&self.noise) {
            errs.push(format!("noise_L must lie in [0, 1) (got {})", self.noise));
        }
        if self.n == 0 {
            errs.push("n must be >= 1".to_string());
        }
        let s = &self.scheduler;
        if !(s.quota_interactive_share > 0.0 && s.quota_interactive_share < 1.0) {
            errs.push(format!(
                "scheduler.quota_interactive_share must lie in (0, 1) (got {})",
                s.quota_interactive_share
            ));
        }
        if !(s.horizon_ms > 0.0) {
            errs.push(format!(
                "scheduler.horizon_ms must be > 0 (got {})",
                s.horizon_ms
            ));
        }
        if s.latency_window == 0 || !(s.latency_window_ms > 0.0) {
            errs.push(
                "scheduler.latency_window and latency_window_ms must be positive".to_string(),
            );
        }
        if !(s.pressure_ref_quanta > 0.0) || !(s.tail_ref_short_deadlines > 0.0) {
            errs.push("scheduler signal normalizers must be > 0".to_string());
        }
        if let Some(v) = s.severity_override {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!(
                    "scheduler.severity_override must lie in [0, 1] (got {v})"
                ));
            }
        }
        if let WorkloadSource::Mix { proportions, .. } = &self.workload {
            if proportions.iter().any(|p| !(*p >= 0.0)) || proportions.iter().sum::<f64>() <= 0.0 {
                errs.push(format!("mix proportions invalid: {proportions:?}"));
            }
        }
        let ph = &self.physics;
        if ph.capacity == 0 {
            errs.push("physics.capacity must be >= 1".to_string());
        }
        if !(ph.base_ms >= 0.0) || !(ph.per_token_ms > 0.0) || !(ph.alpha >= 0.0) {
            errs.push("physics needs base >= 0, per_token > 0, alpha >= 0".to_string());
        }
        // an unloaded call must always make its deadline and never time out
        for bucket in Bucket::ALL {
            let worst = ph.service_time(bucket.range().1, 0);
            let window = self.stream.deadlines.window_ms(bucket);
            if !(window > worst) {
                errs.push(format!(
                    "physics/deadline mismatch: unloaded {bucket} service {worst:.0} ms exceeds its {window:.0} ms deadline ({:?} physics)",
                    self.physics_mode
                ));
            }
        }
        if !(ph.timeout_ms > ph.service_time(Bucket::XLong.range().1, 0)) {
            errs.push(format!(
                "physics.timeout_ms {} does not cover an unloaded xlong call",
                ph.timeout_ms
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert_eq!(ScenarioConfig::default().validate(), Ok(()));
        assert_eq!(
            ScenarioConfig::for_physics(PhysicsMode::Calibrated).validate(),
            Ok(())
        );
    }

    #[test]
    fn threshold_order_reported() {
        let mut c = ScenarioConfig::default();
        c.overload.policy.t1 = 0.5;
        c.overload.policy.t2 = 0.4;
        let err = c.validate().unwrap_err();
        assert!(err.0.iter().any(|e| e.contains("t1 < t2 violated")));
    }

    #[test]
    fn noise_boundary() {
        let mut c = ScenarioConfig {
            noise: 1.0,
            ..ScenarioConfig::default()
        };
        assert!(c.validate().is_err());
        c.noise = 0.999;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn errors_are_exhaustive() {
        let mut c = ScenarioConfig::default();
        c.overload.policy.t1 = 0.9;
        c.noise = -0.1;
        c.ordering.w2 = -1.0;
        c.allocation.quantum = 0.0;
        let err = c.validate().unwrap_err();
        assert!(err.0.len() >= 4, "{err}");
    }

    #[test]
    fn mixed_physics_is_inconsistent() {
        let c = ScenarioConfig {
            physics: Physics::calibrated(),
            ..ScenarioConfig::default()
        };
        let err = c.validate().unwrap_err();
        assert!(err
            .0
            .iter()
            .any(|e| e.contains("physics/deadline mismatch")));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>(), Ok(s));
        }
        assert!("fifo".parse::<Strategy>().is_err());
    }
}
