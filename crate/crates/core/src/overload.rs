//! Admission boundary: severity from client-visible signals, and the bucket
//! ladder that turns severity into admit / defer / reject.

use serde::{Deserialize, Serialize};

use crate::provider::Observables;
use crate::workload::Bucket;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityWeights {
    pub load: f64,
    pub queue: f64,
    pub tail: f64,
}

impl Default for SeverityWeights {
    fn default() -> Self {
        SeverityWeights {
            load: 0.4,
            queue: 0.3,
            tail: 0.3,
        }
    }
}

impl SeverityWeights {
    /// Rescaled to sum to one. All-zero weights fall back to an even split.
    pub fn normalized(&self) -> SeverityWeights {
        let sum = self.load + self.queue + self.tail;
        if sum <= 0.0 {
            return SeverityWeights {
                load: 1.0 / 3.0,
                queue: 1.0 / 3.0,
                tail: 1.0 / 3.0,
            };
        }
        SeverityWeights {
            load: self.load / sum,
            queue: self.queue / sum,
            tail: self.tail / sum,
        }
    }
}

pub fn severity(obs: &Observables, weights: &SeverityWeights) -> f64 {
    let w = weights.normalized();
    let s =
        w.load * obs.provider_load + w.queue * obs.queue_pressure + w.tail * obs.tail_latency_ratio;
    s.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketPolicyKind {
    CostLadder,
    UniformMild,
    UniformHarsh,
    Reverse,
}

impl BucketPolicyKind {
    pub const ALL: [BucketPolicyKind; 4] = [
        BucketPolicyKind::CostLadder,
        BucketPolicyKind::UniformMild,
        BucketPolicyKind::UniformHarsh,
        BucketPolicyKind::Reverse,
    ];

    /// Shedding tier per bucket. Short is always tier 0.
    pub fn tier(self, bucket: Bucket) -> u8 {
        use BucketPolicyKind::*;
        match (self, bucket) {
            (_, Bucket::Short) => 0,
            (CostLadder, Bucket::Medium) => 0,
            (CostLadder, Bucket::Long) => 1,
            (CostLadder, Bucket::XLong) => 2,
            (UniformMild, _) => 1,
            (UniformHarsh, _) => 2,
            (Reverse, Bucket::Medium) => 0,
            (Reverse, Bucket::Long) => 2,
            (Reverse, Bucket::XLong) => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BucketPolicyKind::CostLadder => "cost_ladder",
            BucketPolicyKind::UniformMild => "uniform_mild",
            BucketPolicyKind::UniformHarsh => "uniform_harsh",
            BucketPolicyKind::Reverse => "reverse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketPolicy {
    pub kind: BucketPolicyKind,
    /// Defer threshold for tiers 1 and 2.
    pub t1: f64,
    /// Reject threshold for tier 2.
    pub t2: f64,
    /// Reject threshold for tier 1.
    pub t3: f64,
}

impl Default for BucketPolicy {
    fn default() -> Self {
        BucketPolicy {
            kind: BucketPolicyKind::CostLadder,
            t1: 0.45,
            t2: 0.65,
            t3: 0.80,
        }
    }
}

impl BucketPolicy {
    pub fn with_kind(kind: BucketPolicyKind) -> Self {
        BucketPolicy {
            kind,
            ..BucketPolicy::default()
        }
    }

    /// Action for a request the client can see as `bucket`. A blind client
    /// (no bucket) has no cost ladder to shed on and always admits.
    pub fn action(&self, bucket: Option<Bucket>, sev: f64) -> Action {
        let Some(bucket) = bucket else {
            return Action::Admit;
        };
        match self.kind.tier(bucket) {
            0 => Action::Admit,
            tier => {
                let reject_at = if tier >= 2 { self.t2 } else { self.t3 };
                if sev >= reject_at {
                    Action::Reject
                } else if sev >= self.t1 {
                    Action::Defer
                } else {
                    Action::Admit
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Admit,
    Defer,
    Reject,
}

/// Exponential retry delay for deferred requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backoff {
    pub base_ms: f64,
    pub cap_ms: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base_ms: 500.0,
            cap_ms: 8_000.0,
        }
    }
}

impl Backoff {
    /// `base * 2^(attempt - 1)`, capped. `attempt` counts from 1.
    pub fn delay_ms(&self, attempt: u32) -> f64 {
        assert!(attempt >= 1, "backoff attempts count from 1");
        let doublings = (attempt - 1).min(62) as i32;
        (self.base_ms * 2f64.powi(doublings)).min(self.cap_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Admit,
    Defer { backoff_ms: f64 },
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverloadDecision {
    pub decision: Decision,
    pub severity: f64,
}

impl OverloadDecision {
    pub fn action(&self) -> Action {
        match self.decision {
            Decision::Admit => Action::Admit,
            Decision::Defer { .. } => Action::Defer,
            Decision::Reject => Action::Reject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OverloadConfig {
    pub policy: BucketPolicy,
    pub weights: SeverityWeights,
    pub backoff: Backoff,
}

impl OverloadConfig {
    /// `attempt` is the defer attempt this decision would become (1-based).
    pub fn decide(&self, bucket: Option<Bucket>, sev: f64, attempt: u32) -> OverloadDecision {
        let decision = match self.policy.action(bucket, sev) {
            Action::Admit => Decision::Admit,
            Action::Defer => Decision::Defer {
                backoff_ms: self.backoff.delay_ms(attempt),
            },
            Action::Reject => Decision::Reject,
        };
        OverloadDecision {
            decision,
            severity: sev,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: [f64; 8] = [0.0, 0.44, 0.45, 0.64, 0.65, 0.79, 0.80, 1.0];

    #[test]
    fn severity_extremes() {
        let w = SeverityWeights::default();
        assert_eq!(severity(&Observables::new(0.0, 0.0, 0.0), &w), 0.0);
        assert!((severity(&Observables::new(1.0, 1.0, 1.0), &w) - 1.0).abs() < 1e-12);
        let odd = SeverityWeights {
            load: 3.0,
            queue: 0.5,
            tail: 7.0,
        };
        assert!((severity(&Observables::new(0.5, 0.5, 0.5), &odd) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ladder_examples() {
        let p = BucketPolicy::default();
        for kind in BucketPolicyKind::ALL {
            assert_eq!(
                BucketPolicy::with_kind(kind).action(Some(Bucket::Short), 0.99),
                Action::Admit
            );
        }
        assert_eq!(p.action(Some(Bucket::XLong), 0.70), Action::Reject);
        assert_eq!(p.action(Some(Bucket::Long), 0.70), Action::Defer);
        assert_eq!(
            BucketPolicy::with_kind(BucketPolicyKind::UniformMild)
                .action(Some(Bucket::Medium), 0.70),
            Action::Defer
        );
        assert_eq!(p.action(None, 1.0), Action::Admit);
    }

    #[test]
    fn exhaustive_policy_table() {
        use Action::*;
        // rows: severity grid; expected action for (medium, long, xlong)
        let tier0 = [Admit; 8];
        let tier1 = [Admit, Admit, Defer, Defer, Defer, Defer, Reject, Reject];
        let tier2 = [Admit, Admit, Defer, Defer, Reject, Reject, Reject, Reject];
        let expected = |kind: BucketPolicyKind, b: Bucket| -> [Action; 8] {
            match (kind, b) {
                (_, Bucket::Short) => tier0,
                (BucketPolicyKind::CostLadder, Bucket::Medium) => tier0,
                (BucketPolicyKind::CostLadder, Bucket::Long) => tier1,
                (BucketPolicyKind::CostLadder, Bucket::XLong) => tier2,
                (BucketPolicyKind::UniformMild, _) => tier1,
                (BucketPolicyKind::UniformHarsh, _) => tier2,
                (BucketPolicyKind::Reverse, Bucket::Medium) => tier0,
                (BucketPolicyKind::Reverse, Bucket::Long) => tier2,
                (BucketPolicyKind::Reverse, Bucket::XLong) => tier1,
            }
        };
        for kind in BucketPolicyKind::ALL {
            let p = BucketPolicy::with_kind(kind);
            for b in Bucket::ALL {
                let want = expected(kind, b);
                for (sev, w) in GRID.iter().zip(want) {
                    assert_eq!(p.action(Some(b), *sev), w, "{kind:?} {b} {sev}");
                }
            }
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let b = Backoff::default();
        assert_eq!(b.delay_ms(1), 500.0);
        assert_eq!(b.delay_ms(4), 4000.0);
        assert_eq!(b.delay_ms(10), 8000.0);
        assert_eq!(b.delay_ms(500), 8000.0);
    }

    #[test]
    fn decide_carries_backoff_and_severity() {
        let cfg = OverloadConfig::default();
        let d = cfg.decide(Some(Bucket::Long), 0.5, 2);
        assert_eq!(d.decision, Decision::Defer { backoff_ms: 1000.0 });
        assert_eq!(d.severity, 0.5);
        assert_eq!(d.action(), Action::Defer);
    }
}
