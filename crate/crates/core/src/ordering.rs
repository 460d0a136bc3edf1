//! Intra-class sequencing.
//!
//! Heavy requests are released by a score that favours old, small and
//! urgent work among the candidates the allocation layer currently allows.

use serde::{Deserialize, Serialize};

use crate::workload::{Request, RequestId};

/// The slice of a request the ordering layer is allowed to look at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuedRequest {
    pub id: RequestId,
    pub arrival_ms: f64,
    pub deadline_ms: f64,
    /// Estimated cost in token units (the p50 prior).
    pub cost: f64,
}

impl From<&Request> for QueuedRequest {
    fn from(r: &Request) -> Self {
        QueuedRequest {
            id: r.id,
            arrival_ms: r.arrival_ms,
            deadline_ms: r.deadline_ms,
            cost: r.estimated_cost(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderingWeights {
    /// Gain on wait (seconds) per unit cost.
    pub w1: f64,
    /// Size penalty.
    pub w2: f64,
    /// Urgency gain.
    pub w3: f64,
    /// Size normalizer in tokens.
    #[serde(rename = "ref")]
    pub ref_tokens: f64,
}

impl Default for OrderingWeights {
    fn default() -> Self {
        OrderingWeights {
            w1: 1.0,
            w2: 0.5,
            w3: 2.0,
            ref_tokens: 1024.0,
        }
    }
}

impl OrderingWeights {
    pub fn scaled(&self, k: f64) -> Self {
        OrderingWeights {
            w1: self.w1 * k,
            w2: self.w2 * k,
            w3: self.w3 * k,
            ref_tokens: self.ref_tokens,
        }
    }
}

/// Elapsed fraction of the deadline window, clamped to `[0, 1]`.
pub fn urgency(req: &QueuedRequest, now: f64) -> f64 {
    let window = req.deadline_ms - req.arrival_ms;
    if window <= 0.0 {
        return 1.0;
    }
    ((now - req.arrival_ms) / window).clamp(0.0, 1.0)
}

/// `w1 * wait / cost - w2 * size / ref + w3 * urgency`, with wait in seconds.
pub fn score(req: &QueuedRequest, now: f64, w: &OrderingWeights) -> f64 {
    let wait_s = (now - req.arrival_ms).max(0.0) / 1000.0;
    let size = req.cost;
    w.w1 * (wait_s / req.cost) - w.w2 * (size / w.ref_tokens) + w.w3 * urgency(req, now)
}

/// Highest score wins; ties go to the earlier arrival, then the lower id.
pub fn select_next<'a, I>(feasible: I, now: f64, w: &OrderingWeights) -> Option<RequestId>
where
    I: IntoIterator<Item = &'a QueuedRequest>,
{
    let mut best: Option<(&QueuedRequest, f64)> = None;
    for cand in feasible {
        let s = score(cand, now, w);
        let better = match best {
            None => true,
            Some((b, bs)) => {
                s > bs || (s == bs && (cand.arrival_ms, cand.id) < (b.arrival_ms, b.id))
            }
        };
        if better {
            best = Some((cand, s));
        }
    }
    best.map(|(r, _)| r.id)
}
