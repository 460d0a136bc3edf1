//! Synthetic request streams, deadlines, and client-visible priors.
//!
//! A stream is generated once per `(regime, n, seed)` and is independent of
//! the information level: priors are attached afterwards so every information
//! condition and noise level sees the exact same arrivals and true sizes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::Physics;
use crate::rng::{derive_seed, unit_f64};

pub type RequestId = u32;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: expected a positive integer token count, got {content:?}")]
    Parse { line: usize, content: String },
    #[error("trace contains no token counts")]
    EmptyTrace,
    #[error("requested {requested} requests but trace only has {available} rows (enable sampling with replacement)")]
    NotEnoughRows { requested: usize, available: usize },
    #[error("noise level {0} outside [0, 1)")]
    NoiseOutOfRange(f64),
}

/// Output-token magnitude bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Short,
    Medium,
    Long,
    #[serde(rename = "xlong")]
    XLong,
}

/// Upper token bound used for synthetic xlong draws and the xlong prior.
pub const XLONG_CAP: u32 = 4096;

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::Short, Bucket::Medium, Bucket::Long, Bucket::XLong];

    pub fn of_tokens(tokens: u32) -> Bucket {
        match tokens {
            0..=64 => Bucket::Short,
            65..=256 => Bucket::Medium,
            257..=1024 => Bucket::Long,
            _ => Bucket::XLong,
        }
    }

    /// Inclusive token range; xlong is open-ended in principle and capped here.
    pub fn range(self) -> (u32, u32) {
        match self {
            Bucket::Short => (1, 64),
            Bucket::Medium => (65, 256),
            Bucket::Long => (257, 1024),
            Bucket::XLong => (1025, XLONG_CAP),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn class(self) -> Class {
        match self {
            Bucket::Short | Bucket::Medium => Class::Interactive,
            Bucket::Long | Bucket::XLong => Class::Heavy,
        }
    }

    pub fn geometric_midpoint(self) -> f64 {
        let (lo, hi) = self.range();
        (lo as f64 * hi as f64).sqrt()
    }

    pub fn upper_bound(self) -> f64 {
        self.range().1 as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Short => "short",
            Bucket::Medium => "medium",
            Bucket::Long => "long",
            Bucket::XLong => "xlong",
        }
    }

    /// Exact mean of the discrete log-uniform law used by [`Bucket::sample_tokens`].
    pub fn mean_tokens(self) -> f64 {
        let (lo, hi) = self.range();
        let norm = ((hi as f64 + 1.0) / lo as f64).ln();
        (lo..=hi)
            .map(|k| k as f64 * ((k as f64 + 1.0) / k as f64).ln() / norm)
            .sum()
    }

    /// Log-uniform draw over the bucket's integer range from a uniform `u ∈ [0, 1)`.
    pub fn sample_tokens(self, u: f64) -> u32 {
        let (lo, hi) = self.range();
        let (ln_lo, ln_hi) = ((lo as f64).ln(), (hi as f64 + 1.0).ln());
        let k = (ln_lo + u * (ln_hi - ln_lo)).exp().floor() as u32;
        k.clamp(lo, hi)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Routing class: short+medium are interactive, long+xlong are heavy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Interactive,
    Heavy,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Interactive, Class::Heavy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Class {
        match self {
            Class::Interactive => Class::Heavy,
            Class::Heavy => Class::Interactive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Interactive => "interactive",
            Class::Heavy => "heavy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestState {
    Pending,
    Deferred,
    InFlight,
    Completed,
    Rejected,
    TimedOut,
}

impl RequestState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            RequestState::Completed | RequestState::Rejected | RequestState::TimedOut
        )
    }

    fn can_move_to(self, next: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, next),
            (Pending, Deferred)
                | (Pending, InFlight)
                | (Pending, Rejected)
                | (Deferred, Pending)
                | (InFlight, Completed)
                | (InFlight, TimedOut)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub bucket: Bucket,
    pub true_tokens: u32,
    pub arrival_ms: f64,
    /// Absolute deadline.
    pub deadline_ms: f64,
    pub prior_p50: f64,
    pub prior_p90: f64,
    pub class: Class,
    /// Bucket the client may route and shed on; `None` when the client is blind.
    pub routing_bucket: Option<Bucket>,
    pub state: RequestState,
}

impl Request {
    fn new(id: RequestId, true_tokens: u32, arrival_ms: f64, deadlines: &Deadlines) -> Self {
        let bucket = Bucket::of_tokens(true_tokens);
        Request {
            id,
            bucket,
            true_tokens,
            arrival_ms,
            deadline_ms: arrival_ms + deadlines.window_ms(bucket),
            prior_p50: true_tokens as f64,
            prior_p90: true_tokens as f64,
            class: bucket.class(),
            routing_bucket: Some(bucket),
            state: RequestState::Pending,
        }
    }

    /// Lane the client routes this request into. Blind clients use one neutral lane.
    pub fn lane(&self) -> Class {
        self.routing_bucket
            .map_or(Class::Interactive, Bucket::class)
    }

    /// Estimated cost in token units as seen by the policies.
    pub fn estimated_cost(&self) -> f64 {
        self.prior_p50
    }

    /// Moves along the lifecycle; an illegal transition is a scheduler bug.
    pub fn advance(&mut self, next: RequestState) {
        assert!(
            self.state.can_move_to(next),
            "request {}: illegal transition {:?} -> {:?}",
            self.id,
            self.state,
            next
        );
        self.state = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mix {
    Balanced,
    HeavyDominated,
}

impl Mix {
    pub fn proportions(self) -> [f64; 4] {
        match self {
            Mix::Balanced => [0.50, 0.25, 0.15, 0.10],
            Mix::HeavyDominated => [0.20, 0.20, 0.30, 0.30],
        }
    }
}

/// 70% long/xlong mix used for the allocation fairness comparison.
pub const FAIRNESS_MIX: [f64; 4] = [0.15, 0.15, 0.35, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Congestion {
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Regime {
    pub mix: Mix,
    pub congestion: Congestion,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime {
            mix: Mix::Balanced,
            congestion: Congestion::Medium,
        },
        Regime {
            mix: Mix::Balanced,
            congestion: Congestion::High,
        },
        Regime {
            mix: Mix::HeavyDominated,
            congestion: Congestion::Medium,
        },
        Regime {
            mix: Mix::HeavyDominated,
            congestion: Congestion::High,
        },
    ];

    pub fn new(mix: Mix, congestion: Congestion) -> Self {
        Regime { mix, congestion }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mix = match self.mix {
            Mix::Balanced => "balanced",
            Mix::HeavyDominated => "heavy",
        };
        let congestion = match self.congestion {
            Congestion::Medium => "medium",
            Congestion::High => "high",
        };
        write!(f, "{mix}/{congestion}")
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (mix, congestion) = s
            .split_once('/')
            .ok_or_else(|| format!("regime {s:?} is not of the form <mix>/<congestion>"))?;
        let mix = match mix {
            "balanced" => Mix::Balanced,
            "heavy" | "heavy_dominated" => Mix::HeavyDominated,
            other => return Err(format!("unknown mix {other:?}")),
        };
        let congestion = match congestion {
            "medium" => Congestion::Medium,
            "high" => Congestion::High,
            other => return Err(format!("unknown congestion {other:?}")),
        };
        Ok(Regime { mix, congestion })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationLevel {
    Blind,
    ClassOnly,
    Coarse,
    Oracle,
}

impl InformationLevel {
    pub const ALL: [InformationLevel; 4] = [
        InformationLevel::Blind,
        InformationLevel::ClassOnly,
        InformationLevel::Coarse,
        InformationLevel::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InformationLevel::Blind => "blind",
            InformationLevel::ClassOnly => "class_only",
            InformationLevel::Coarse => "coarse",
            InformationLevel::Oracle => "oracle",
        }
    }
}

/// Relative deadline window per bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deadlines {
    pub short_ms: f64,
    pub medium_ms: f64,
    pub long_ms: f64,
    pub xlong_ms: f64,
}

impl Default for Deadlines {
    fn default() -> Self {
        Deadlines {
            short_ms: 2_000.0,
            medium_ms: 10_000.0,
            long_ms: 40_000.0,
            xlong_ms: 90_000.0,
        }
    }
}

impl Deadlines {
    pub fn window_ms(&self, bucket: Bucket) -> f64 {
        match bucket {
            Bucket::Short => self.short_ms,
            Bucket::Medium => self.medium_ms,
            Bucket::Long => self.long_ms,
            Bucket::XLong => self.xlong_ms,
        }
    }

    pub fn scaled(&self, factor: f64) -> Deadlines {
        Deadlines {
            short_ms: self.short_ms * factor,
            medium_ms: self.medium_ms * factor,
            long_ms: self.long_ms * factor,
            xlong_ms: self.xlong_ms * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    /// Offered load `E[service] * rate / capacity` for medium congestion.
    pub rho_medium: f64,
    pub rho_high: f64,
    pub deadlines: Deadlines,
    /// p50 = p90 value handed out when the client has no magnitude information.
    pub neutral_prior: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rho_medium: 0.7,
            rho_high: 1.1,
            deadlines: Deadlines::default(),
            neutral_prior: Bucket::Medium.geometric_midpoint(),
        }
    }
}

impl WorkloadConfig {
    pub fn rho(&self, congestion: Congestion) -> f64 {
        match congestion {
            Congestion::Medium => self.rho_medium,
            Congestion::High => self.rho_high,
        }
    }
}

/// Maps a uniform quantile onto a bucket under the given mix proportions.
pub fn bucket_for_quantile(proportions: &[f64; 4], u: f64) -> Bucket {
    let total: f64 = proportions.iter().sum();
    let mut acc = 0.0;
    for (bucket, p) in Bucket::ALL.iter().zip(proportions) {
        acc += p / total;
        if u < acc {
            return *bucket;
        }
    }
    Bucket::XLong
}

/// Arrival rate (requests per ms) that produces offered load `rho`.
pub fn arrival_rate_per_ms(mean_service_ms: f64, rho: f64, capacity: usize) -> f64 {
    rho * capacity as f64 / mean_service_ms
}

/// Seeded generator for the synthetic regimes and for trace replay.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    pub config: WorkloadConfig,
    pub physics: Physics,
}

impl StreamGenerator {
    pub fn new(config: WorkloadConfig, physics: Physics) -> Self {
        StreamGenerator { config, physics }
    }

    /// Mean unloaded service time for a bucket mix.
    pub fn mean_service_ms(&self, proportions: &[f64; 4]) -> f64 {
        let total: f64 = proportions.iter().sum();
        let mean_tokens: f64 = Bucket::ALL
            .iter()
            .zip(proportions)
            .map(|(b, p)| p / total * b.mean_tokens())
            .sum();
        self.physics.base_ms + self.physics.per_token_ms * mean_tokens
    }

    pub fn generate_stream(&self, regime: Regime, n: usize, seed: u64) -> Vec<Request> {
        self.generate_with_mix(&regime.mix.proportions(), regime.congestion, n, seed)
    }

    pub fn generate_with_mix(
        &self,
        proportions: &[f64; 4],
        congestion: Congestion,
        n: usize,
        seed: u64,
    ) -> Vec<Request> {
        let rate = arrival_rate_per_ms(
            self.mean_service_ms(proportions),
            self.config.rho(congestion),
            self.physics.capacity,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut now = 0.0;
        (0..n)
            .map(|i| {
                now += exp_interarrival(&mut rng, rate);
                let bucket = bucket_for_quantile(proportions, rng.random::<f64>());
                let tokens = bucket.sample_tokens(rng.random::<f64>());
                Request::new(i as RequestId, tokens, now, &self.config.deadlines)
            })
            .collect()
    }

    /// Requests whose sizes are resampled from an empirical token distribution.
    pub fn replay_tokens(
        &self,
        tokens: &[u32],
        congestion: Congestion,
        n: usize,
        seed: u64,
        with_replacement: bool,
    ) -> Result<Vec<Request>, WorkloadError> {
        if tokens.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        if !with_replacement && n > tokens.len() {
            return Err(WorkloadError::NotEnoughRows {
                requested: n,
                available: tokens.len(),
            });
        }
        let mean_tokens = tokens.iter().map(|&t| t as f64).sum::<f64>() / tokens.len() as f64;
        let mean_service = self.physics.base_ms + self.physics.per_token_ms * mean_tokens;
        let rate = arrival_rate_per_ms(
            mean_service,
            self.config.rho(congestion),
            self.physics.capacity,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drawn: Vec<u32> = if with_replacement {
            (0..n)
                .map(|_| tokens[rng.random_range(0..tokens.len())])
                .collect()
        } else {
            let mut pool = tokens.to_vec();
            // partial Fisher-Yates
            for i in 0..n {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(n);
            pool
        };
        let mut now = 0.0;
        Ok(drawn
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                now += exp_interarrival(&mut rng, rate);
                Request::new(i as RequestId, t, now, &self.config.deadlines)
            })
            .collect())
    }

    pub fn load_trace(
        &self,
        path: &Path,
        congestion: Congestion,
        n: usize,
        seed: u64,
        with_replacement: bool,
    ) -> Result<Vec<Request>, WorkloadError> {
        let tokens = read_trace(path)?;
        self.replay_tokens(&tokens, congestion, n, seed, with_replacement)
    }
}

fn exp_interarrival(rng: &mut ChaCha8Rng, rate_per_ms: f64) -> f64 {
    // 1 - u lies in (0, 1], so the log is finite.
    -(1.0 - rng.random::<f64>()).ln() / rate_per_ms
}

pub fn read_trace(path: &Path) -> Result<Vec<u32>, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text)
}

/// Parses a one-column token list. Blank lines are skipped and a leading
/// `tokens` header is tolerated.
pub fn parse_trace(text: &str) -> Result<Vec<u32>, WorkloadError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim().trim_end_matches(',').trim();
        if line.is_empty() {
            continue;
        }
        if out.is_empty() && line.eq_ignore_ascii_case("tokens") {
            continue;
        }
        match line.parse::<u32>() {
            Ok(v) if v > 0 => out.push(v),
            _ => {
                return Err(WorkloadError::Parse {
                    line: idx + 1,
                    content: raw.to_string(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    Ok(out)
}

/// Attaches the priors a client would see at the given information level.
///
/// Noise applies to coarse priors only: both p50 and p90 are scaled by one
/// per-request factor drawn from `U[1 - noise, 1 + noise]`, keyed on
/// `(seed, request id)` so the factor does not depend on stream order.
pub fn attach_priors(
    mut stream: Vec<Request>,
    level: InformationLevel,
    noise: f64,
    seed: u64,
    neutral_prior: f64,
) -> Result<Vec<Request>, WorkloadError> {
    if !(0.0..1.0).contains(&noise) {
        return Err(WorkloadError::NoiseOutOfRange(noise));
    }
    for req in &mut stream {
        match level {
            InformationLevel::Oracle => {
                req.prior_p50 = req.true_tokens as f64;
                req.prior_p90 = req.true_tokens as f64;
                req.routing_bucket = Some(req.bucket);
            }
            InformationLevel::Coarse => {
                let factor = noise_factor(seed, req.id, noise);
                req.prior_p50 = req.bucket.geometric_midpoint() * factor;
                req.prior_p90 = req.bucket.upper_bound() * factor;
                req.routing_bucket = Some(req.bucket);
            }
            InformationLevel::ClassOnly => {
                req.prior_p50 = neutral_prior;
                req.prior_p90 = neutral_prior;
                req.routing_bucket = Some(req.bucket);
            }
            InformationLevel::Blind => {
                req.prior_p50 = neutral_prior;
                req.prior_p90 = neutral_prior;
                req.routing_bucket = None;
            }
        }
        if req.prior_p50 > req.prior_p90 {
            std::mem::swap(&mut req.prior_p50, &mut req.prior_p90);
        }
    }
    Ok(stream)
}

/// Multiplicative prior error in `[1 - noise, 1 + noise]`.
pub fn noise_factor(seed: u64, id: RequestId, noise: f64) -> f64 {
    if noise == 0.0 {
        return 1.0;
    }
    let u = unit_f64(derive_seed(seed ^ 0x6e6f_6973_6500_0000, id as u64));
    1.0 - noise + 2.0 * noise * u
}
