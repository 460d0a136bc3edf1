//! The experiment matrix. Every cell list is a cross product of the axes
//! declared here; `declared_cells` multiplies the axis lengths independently
//! so the generated lists can be audited against it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clientsched_core::overload::BucketPolicyKind;
use clientsched_core::workload::{Congestion, InformationLevel, Mix, Regime, FAIRNESS_MIX};
use clientsched_core::{ScenarioConfig, Strategy, WorkloadSource};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    MainBenchmark,
    InfoLadder,
    OverloadPolicy,
    Fairness,
    Sensitivity,
    NoiseSweep,
    TraceReplay,
    Calibration,
}

pub const MAIN_STRATEGIES: [Strategy; 4] = [
    Strategy::DirectNaive,
    Strategy::QuotaTiered,
    Strategy::AdaptiveDrr,
    Strategy::FinalOlc,
];
pub const HIGH_REGIMES: [Regime; 2] = [
    Regime {
        mix: Mix::Balanced,
        congestion: Congestion::High,
    },
    Regime {
        mix: Mix::HeavyDominated,
        congestion: Congestion::High,
    },
];
pub const FAIRNESS_STRATEGIES: [Strategy; 3] = [
    Strategy::DirectNaive,
    Strategy::ShortPriority,
    Strategy::FairQueuingRr,
];
pub const FAIRNESS_CONGESTION: Congestion = Congestion::High;
pub const NOISE_LEVELS: [f64; 5] = [0.0, 0.1, 0.2, 0.4, 0.6];
pub const SENSITIVITY_REGIME: Regime = Regime {
    mix: Mix::Balanced,
    congestion: Congestion::High,
};
pub const SENSITIVITY_STEPS: [f64; 2] = [-0.2, 0.2];
pub const TRACE_STRATEGIES: [Strategy; 3] = [
    Strategy::DirectNaive,
    Strategy::QuotaTiered,
    Strategy::FinalOlc,
];
pub const TRACE_CONGESTION: Congestion = Congestion::High;

/// Smallest gap kept between neighbouring thresholds when a perturbation
/// would otherwise cross one.
pub const THRESHOLD_GAP: f64 = 0.01;

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::MainBenchmark,
        Experiment::InfoLadder,
        Experiment::OverloadPolicy,
        Experiment::Fairness,
        Experiment::Sensitivity,
        Experiment::NoiseSweep,
        Experiment::TraceReplay,
        Experiment::Calibration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::MainBenchmark => "main_benchmark",
            Experiment::InfoLadder => "info_ladder",
            Experiment::OverloadPolicy => "overload_policy",
            Experiment::Fairness => "fairness",
            Experiment::Sensitivity => "sensitivity",
            Experiment::NoiseSweep => "noise_sweep",
            Experiment::TraceReplay => "trace_replay",
            Experiment::Calibration => "calibration",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Experiment::ALL.iter().map(|e| e.name()).collect()
    }

    /// Stem of the main output table.
    pub fn table(self) -> &'static str {
        match self {
            Experiment::MainBenchmark => "main_benchmark_summary",
            Experiment::InfoLadder => "prior_ablation_summary",
            Experiment::OverloadPolicy => "overload_policy_comparison_summary",
            Experiment::Fairness => "fairness_comparison_summary",
            Experiment::Sensitivity => "threshold_sensitivity_summary",
            Experiment::NoiseSweep => "predictor_noise_summary",
            Experiment::TraceReplay => "trace_replay_summary",
            Experiment::Calibration => "latency_calibration",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Experiment::MainBenchmark => "regimes x strategies; direct_naive rows are context only",
            Experiment::InfoLadder => "regimes x information levels under the full stack",
            Experiment::OverloadPolicy => "high-congestion regimes x bucket policies",
            Experiment::Fairness => "heavy 70% mix at high congestion x allocation alternatives",
            Experiment::Sensitivity => "full stack with t1, t2, t3, backoff base at -20% / +20%",
            Experiment::NoiseSweep => "prior noise levels x regimes",
            Experiment::TraceReplay => "token trace resampled at high congestion x strategies",
            Experiment::Calibration => "weighted linear latency fit over bucket means",
        }
    }

    /// Product of the axis lengths.
    pub fn declared_cells(self) -> usize {
        match self {
            Experiment::MainBenchmark => Regime::ALL.len() * MAIN_STRATEGIES.len(),
            Experiment::InfoLadder => Regime::ALL.len() * InformationLevel::ALL.len(),
            Experiment::OverloadPolicy => HIGH_REGIMES.len() * BucketPolicyKind::ALL.len(),
            Experiment::Fairness => FAIRNESS_STRATEGIES.len(),
            Experiment::Sensitivity => 1 + Knob::ALL.len() * SENSITIVITY_STEPS.len(),
            Experiment::NoiseSweep => NOISE_LEVELS.len() * Regime::ALL.len(),
            Experiment::TraceReplay => TRACE_STRATEGIES.len(),
            Experiment::Calibration => 0,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| HarnessError::UnknownExperiment(s.to_string()))
    }
}

/// One row of an experiment table.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub experiment: Experiment,
    /// Unique within the experiment.
    pub label: String,
    pub regime: String,
    /// Perturbation name for sensitivity cells, empty elsewhere.
    pub variant: String,
    /// Shown for orientation, not compared.
    pub context_only: bool,
    /// Seed is set per run.
    pub config: ScenarioConfig,
}

/// A threshold or backoff knob perturbed by the sensitivity experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knob {
    T1,
    T2,
    T3,
    BackoffBase,
}

impl Knob {
    pub const ALL: [Knob; 4] = [Knob::T1, Knob::T2, Knob::T3, Knob::BackoffBase];

    pub fn name(self) -> &'static str {
        match self {
            Knob::T1 => "t1",
            Knob::T2 => "t2",
            Knob::T3 => "t3",
            Knob::BackoffBase => "backoff_base",
        }
    }

    /// Scales the knob by `1 + step`. A threshold that would cross its
    /// neighbour pushes the neighbour out by [`THRESHOLD_GAP`] so the ladder
    /// stays ordered.
    pub fn apply(self, cfg: &mut ScenarioConfig, step: f64) {
        let f = 1.0 + step;
        let p = &mut cfg.overload.policy;
        match self {
            Knob::T1 => {
                p.t1 *= f;
                p.t2 = p.t2.max(p.t1 + THRESHOLD_GAP);
                p.t3 = p.t3.max(p.t2 + THRESHOLD_GAP);
            }
            Knob::T2 => {
                p.t2 *= f;
                p.t1 = p.t1.min(p.t2 - THRESHOLD_GAP);
                p.t3 = p.t3.max(p.t2 + THRESHOLD_GAP);
            }
            Knob::T3 => {
                p.t3 *= f;
                p.t2 = p.t2.min(p.t3 - THRESHOLD_GAP);
                p.t1 = p.t1.min(p.t2 - THRESHOLD_GAP);
            }
            Knob::BackoffBase => {
                let b = &mut cfg.overload.backoff;
                b.base_ms *= f;
                b.cap_ms = b.cap_ms.max(b.base_ms);
            }
        }
    }
}

fn step_label(step: f64) -> String {
    format!("{:+.0}%", step * 100.0)
}

fn with(base: &ScenarioConfig, workload: WorkloadSource, strategy: Strategy) -> ScenarioConfig {
    ScenarioConfig {
        workload,
        strategy,
        seed: 0,
        ..base.clone()
    }
}

fn regime_source(regime: Regime) -> WorkloadSource {
    WorkloadSource::Regime { regime }
}

fn congestion_name(c: Congestion) -> &'static str {
    match c {
        Congestion::Medium => "medium",
        Congestion::High => "high",
    }
}

/// Cells of an experiment in output order. Calibration has none.
pub fn cells(experiment: Experiment, base: &ScenarioConfig, trace: &Path) -> Vec<Cell> {
    let cell = |label: String,
                regime: String,
                variant: String,
                context_only: bool,
                config: ScenarioConfig| Cell {
        experiment,
        label,
        regime,
        variant,
        context_only,
        config,
    };
    match experiment {
        Experiment::MainBenchmark => Regime::ALL
            .iter()
            .flat_map(|&regime| MAIN_STRATEGIES.iter().map(move |&st| (regime, st)))
            .map(|(regime, st)| {
                cell(
                    format!("{regime}/{st}"),
                    regime.to_string(),
                    String::new(),
                    st == Strategy::DirectNaive,
                    with(base, regime_source(regime), st),
                )
            })
            .collect(),
        Experiment::InfoLadder => Regime::ALL
            .iter()
            .flat_map(|&regime| {
                InformationLevel::ALL
                    .iter()
                    .map(move |&level| (regime, level))
            })
            .map(|(regime, level)| {
                let mut c = with(base, regime_source(regime), Strategy::FinalOlc);
                c.information = level;
                cell(
                    format!("{regime}/{}", level.name()),
                    regime.to_string(),
                    String::new(),
                    false,
                    c,
                )
            })
            .collect(),
        Experiment::OverloadPolicy => HIGH_REGIMES
            .iter()
            .flat_map(|&regime| {
                BucketPolicyKind::ALL
                    .iter()
                    .map(move |&kind| (regime, kind))
            })
            .map(|(regime, kind)| {
                let mut c = with(base, regime_source(regime), Strategy::FinalOlc);
                c.overload.policy.kind = kind;
                cell(
                    format!("{regime}/{}", kind.name()),
                    regime.to_string(),
                    String::new(),
                    false,
                    c,
                )
            })
            .collect(),
        Experiment::Fairness => FAIRNESS_STRATEGIES
            .iter()
            .map(|&st| {
                let regime = format!("fairness_mix/{}", congestion_name(FAIRNESS_CONGESTION));
                let source = WorkloadSource::Mix {
                    proportions: FAIRNESS_MIX,
                    congestion: FAIRNESS_CONGESTION,
                };
                cell(
                    format!("{regime}/{st}"),
                    regime,
                    String::new(),
                    false,
                    with(base, source, st),
                )
            })
            .collect(),
        Experiment::Sensitivity => {
            let regime = SENSITIVITY_REGIME;
            let baseline = with(base, regime_source(regime), Strategy::FinalOlc);
            let variants = Knob::ALL
                .iter()
                .flat_map(|&knob| SENSITIVITY_STEPS.iter().map(move |&step| (knob, step)))
                .map(|(knob, step)| {
                    let mut c = baseline.clone();
                    knob.apply(&mut c, step);
                    (format!("{}{}", knob.name(), step_label(step)), c)
                });
            std::iter::once(("baseline".to_string(), baseline.clone()))
                .chain(variants)
                .map(|(variant, c)| {
                    cell(
                        format!("{regime}/{variant}"),
                        regime.to_string(),
                        variant,
                        false,
                        c,
                    )
                })
                .collect()
        }
        Experiment::NoiseSweep => NOISE_LEVELS
            .iter()
            .flat_map(|&l| Regime::ALL.iter().map(move |&regime| (l, regime)))
            .map(|(l, regime)| {
                let mut c = with(base, regime_source(regime), Strategy::FinalOlc);
                c.noise = l;
                cell(
                    format!("{regime}/L={l}"),
                    regime.to_string(),
                    String::new(),
                    false,
                    c,
                )
            })
            .collect(),
        Experiment::TraceReplay => TRACE_STRATEGIES
            .iter()
            .map(|&st| {
                let regime = format!("trace/{}", congestion_name(TRACE_CONGESTION));
                let source = WorkloadSource::Trace {
                    path: trace.to_path_buf(),
                    congestion: TRACE_CONGESTION,
                };
                cell(
                    format!("{regime}/{st}"),
                    regime,
                    String::new(),
                    false,
                    with(base, source, st),
                )
            })
            .collect(),
        Experiment::Calibration => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generated_lists_match_declared_sizes() {
        let base = ScenarioConfig::default();
        for e in Experiment::ALL {
            let cs = cells(e, &base, Path::new("t.csv"));
            assert_eq!(cs.len(), e.declared_cells(), "{e}");
            let labels: HashSet<_> = cs.iter().map(|c| c.label.as_str()).collect();
            assert_eq!(labels.len(), cs.len(), "{e}: labels must be unique");
            for c in &cs {
                assert!(c.config.validate().is_ok(), "{}", c.label);
            }
        }
        assert_eq!(Experiment::InfoLadder.declared_cells(), 16);
        assert_eq!(Experiment::NoiseSweep.declared_cells(), 20);
        assert_eq!(Experiment::Sensitivity.declared_cells(), 9);
    }

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!(matches!(
            "bogus".parse::<Experiment>(),
            Err(HarnessError::UnknownExperiment(_))
        ));
    }

    #[test]
    fn only_direct_naive_is_context_in_main() {
        let cs = cells(
            Experiment::MainBenchmark,
            &ScenarioConfig::default(),
            Path::new(""),
        );
        for c in cs {
            assert_eq!(c.context_only, c.config.strategy == Strategy::DirectNaive);
        }
    }

    #[test]
    fn sensitivity_perturbs_one_knob_and_keeps_order() {
        let base = ScenarioConfig::default();
        let p0 = base.overload.policy;
        let mut c = base.clone();
        Knob::T1.apply(&mut c, 0.2);
        assert!((c.overload.policy.t1 - 0.54).abs() < 1e-12);
        assert_eq!((c.overload.policy.t2, c.overload.policy.t3), (p0.t2, p0.t3));

        let mut c = base.clone();
        Knob::T3.apply(&mut c, -0.2);
        let p = c.overload.policy;
        assert!((p.t3 - 0.64).abs() < 1e-12);
        assert!((p.t2 - 0.63).abs() < 1e-12);
        assert_eq!(p.t1, p0.t1);

        let mut c = base.clone();
        Knob::BackoffBase.apply(&mut c, -0.2);
        assert_eq!(c.overload.backoff.base_ms, 400.0);
        assert_eq!(c.overload.policy, p0);
    }

    #[test]
    fn step_labels() {
        assert_eq!(step_label(-0.2), "-20%");
        assert_eq!(step_label(0.2), "+20%");
    }
}
