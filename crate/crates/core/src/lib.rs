//! Client-side scheduling in front of a black-box LLM API.
//!
//! Three layers sit between the application and the provider:
//!
//! - [`allocation`] decides which class (interactive or heavy) gets the next
//!   send opportunity,
//! - [`ordering`] picks the concrete heavy request to release,
//! - [`overload`] may admit, defer or reject that release.
//!
//! [`provider`] simulates a congestion-aware provider on a deterministic
//! event clock, [`workload`] generates seeded request streams with
//! client-visible token priors, [`scheduler`] wires strategies together and
//! [`metrics`] turns run logs into joint metrics.

pub mod allocation;
pub mod config;
pub mod metrics;
pub mod ordering;
pub mod overload;
pub mod provider;
mod rng;
pub mod scheduler;
pub mod workload;

pub use config::{ConfigError, ScenarioConfig, SchedulerConfig, Strategy, WorkloadSource};
pub use metrics::{aggregate, summarize, CellSummary, RunSummary};
pub use scheduler::{run, RunError, RunLog};
