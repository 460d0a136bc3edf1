//! Harness settings resolved from defaults, an optional TOML file and CLI flags
//! (flags win).
//!
//! File schema:
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]      # or a range string such as "0-4"
//! n = 200
//! physics = "scaled"           # or "calibrated"
//! parallelism = 8
//! out = "results"
//! trace = "data/sharegpt_like_tokens.csv"
//! calibration = "latency_calibration.csv"
//! runlogs = false
//!
//! [scenario]                   # merged over the defaults for `physics`
//! allocation = { quantum = 256.0, gamma = 1.0 }
//!
//! [scenario.overload.policy]
//! t1 = 0.45
//! ```
//!
//! Relative paths in the file are taken relative to the file. The
//! `workload`, `strategy`, `information`, `noise`, `seed` and `n` keys of
//! `[scenario]` are overwritten per cell.

use std::path::{Path, PathBuf};

use clientsched_core::provider::PhysicsMode;
use clientsched_core::ScenarioConfig;
use serde::Deserialize;

use crate::HarnessError;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_N: usize = 200;
pub const DEFAULT_TRACE: &str =
    concat!(env!("CARGO_MANIFEST_DIR"), "/data/sharegpt_like_tokens.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seeds: Vec<u64>,
    pub n: usize,
    pub physics: PhysicsMode,
    pub parallelism: usize,
    pub out: PathBuf,
    pub trace: PathBuf,
    /// Bucket summary to fit; `None` uses the built-in measurement.
    pub calibration: Option<PathBuf>,
    /// Also dump every run's request log and severity trace.
    pub runlogs: bool,
    /// Scenario every cell starts from.
    pub base: ScenarioConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedList {
    List(Vec<u64>),
    Spec(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seeds: Option<SeedList>,
    pub n: Option<usize>,
    pub physics: Option<PhysicsMode>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub runlogs: Option<bool>,
    #[serde(default)]
    pub scenario: toml::Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = FileConfig::parse(&text).map_err(|message| HarnessError::ConfigFile {
            path: path.to_path_buf(),
            message,
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.out, &mut cfg.trace, &mut cfg.calibration]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<FileConfig, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }
}

/// Flag values; `None` leaves the file or default in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub n: Option<usize>,
    pub physics: Option<PhysicsMode>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub runlogs: bool,
}

impl Settings {
    pub fn resolve(file: Option<FileConfig>, flags: &Overrides) -> Result<Settings, HarnessError> {
        let file = file.unwrap_or_default();
        let seeds = match (&flags.seeds, &file.seeds) {
            (Some(s), _) => s.clone(),
            (None, Some(SeedList::List(s))) => s.clone(),
            (None, Some(SeedList::Spec(s))) => parse_seeds(s).map_err(HarnessError::Settings)?,
            (None, None) => DEFAULT_SEEDS.to_vec(),
        };
        if seeds.is_empty() {
            return Err(HarnessError::Settings(
                "at least one seed is required".into(),
            ));
        }
        let n = flags.n.or(file.n).unwrap_or(DEFAULT_N);
        let physics = flags
            .physics
            .or(file.physics)
            .unwrap_or(PhysicsMode::Scaled);
        let parallelism = flags
            .parallelism
            .or(file.parallelism)
            .unwrap_or_else(default_parallelism);
        if parallelism == 0 {
            return Err(HarnessError::Settings(
                "parallelism must be at least 1".into(),
            ));
        }
        let mut base = merge_scenario(&ScenarioConfig::for_physics(physics), &file.scenario)?;
        base.n = n;
        Ok(Settings {
            seeds,
            n,
            physics,
            parallelism,
            out: flags
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("results")),
            trace: flags
                .trace
                .clone()
                .or(file.trace)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_TRACE)),
            calibration: flags.calibration.clone().or(file.calibration),
            runlogs: flags.runlogs || file.runlogs.unwrap_or(false),
            base,
        })
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings::resolve(None, &Overrides::default()).expect("defaults resolve")
    }
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses `3`, `0-4`, `0,2,5` or mixes such as `0-2,9`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("bad seed list {spec:?}");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
                if a > b {
                    return Err(format!("empty seed range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(format!("bad seed list {spec:?}"));
    }
    Ok(out)
}

/// Deep-merges a partial scenario table over `base`. Keys that the scenario
/// type does not know are reported rather than silently dropped.
pub fn merge_scenario(
    base: &ScenarioConfig,
    partial: &toml::Table,
) -> Result<ScenarioConfig, HarnessError> {
    if partial.is_empty() {
        return Ok(base.clone());
    }
    let err = |message: String| HarnessError::Settings(format!("[scenario] {message}"));
    let mut merged = toml::Table::try_from(base).map_err(|e| err(e.to_string()))?;
    merge_tables(&mut merged, partial);
    let cfg: ScenarioConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| err(e.message().to_string()))?;

    let back = toml::Table::try_from(&cfg).map_err(|e| err(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(partial, &back, "scenario", &mut unknown);
    if !unknown.is_empty() {
        return Err(err(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok(cfg)
}

fn merge_tables(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge_tables(dst, src),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

fn unknown_keys(partial: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in partial {
        let path = format!("{prefix}.{k}");
        match (known.get(k), v) {
            (None, _) => out.push(path),
            (Some(toml::Value::Table(kt)), toml::Value::Table(pt)) => {
                unknown_keys(pt, kt, &path, out)
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clientsched_core::overload::BucketPolicyKind;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0-4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("0-1, 9").unwrap(), vec![0, 1, 9]);
        assert!(parse_seeds("4-2").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn scenario_table_merges_deeply() {
        let file = FileConfig::parse(
            r#"
            n = 50
            [scenario.overload.policy]
            kind = "uniform_mild"
            t1 = 0.5
            "#,
        )
        .unwrap();
        let s = Settings::resolve(Some(file), &Overrides::default()).unwrap();
        let p = s.base.overload.policy;
        assert_eq!(
            (p.kind, p.t1, p.t2),
            (BucketPolicyKind::UniformMild, 0.5, 0.65)
        );
        assert_eq!(s.n, 50);
        assert_eq!(s.base.n, 50);
    }

    #[test]
    fn flags_win_over_file() {
        let file = FileConfig::parse("n = 50\nseeds = \"0-9\"\nphysics = \"calibrated\"").unwrap();
        let flags = Overrides {
            n: Some(20),
            physics: Some(PhysicsMode::Scaled),
            ..Overrides::default()
        };
        let s = Settings::resolve(Some(file.clone()), &flags).unwrap();
        assert_eq!(
            (s.n, s.physics, s.seeds.len()),
            (20, PhysicsMode::Scaled, 10)
        );
        let s = Settings::resolve(Some(file), &Overrides::default()).unwrap();
        assert_eq!(s.base, {
            let mut c = ScenarioConfig::for_physics(PhysicsMode::Calibrated);
            c.n = 50;
            c
        });
    }

    #[test]
    fn optional_scenario_keys_survive() {
        let file = FileConfig::parse("[scenario.scheduler]\nseverity_override = 0.25").unwrap();
        let s = Settings::resolve(Some(file), &Overrides::default()).unwrap();
        assert_eq!(s.base.scheduler.severity_override, Some(0.25));
    }

    #[test]
    fn unknown_keys_are_reported() {
        let file =
            FileConfig::parse("[scenario.scheduler]\nhorizon = 5.0\n[scenario.bogus]\nx = 1")
                .unwrap();
        let msg = Settings::resolve(Some(file), &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("scenario.scheduler.horizon") && msg.contains("scenario.bogus"),
            "{msg}"
        );
        assert!(FileConfig::parse("sedes = [1]").is_err());
    }

    #[test]
    fn bad_types_are_reported() {
        let file = FileConfig::parse("[scenario.overload.policy]\nt1 = \"high\"").unwrap();
        assert!(Settings::resolve(Some(file), &Overrides::default()).is_err());
    }
}
