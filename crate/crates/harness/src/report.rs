//! CSV tables, the reproducibility stamp and the calibration fit.
//!
//! Summary tables hold one row per cell with `<metric>_mean` and
//! `<metric>_std` columns. Milliseconds and counts print with one decimal,
//! fractions and rates with two, and an undefined value is an empty cell.
//! The trailing `undefined` column lists `metric:runs` for metrics that were
//! undefined in some seeds and left out of the mean.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clientsched_core::metrics::MetricKind;
use clientsched_core::provider::{
    fit_calibration, read_calibration_csv, CalibrationFit, CalibrationRow, MEASURED_CALIBRATION_CSV,
};
use clientsched_core::{ScenarioConfig, WorkloadSource};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::experiments::Experiment;
use crate::runner::CellResult;
use crate::settings::Settings;
use crate::HarnessError;

/// Hex digits kept from the config digest.
pub const HASH_LEN: usize = 16;

/// Digest of a cell's config with the seed zeroed. A trace path is replaced
/// by the digest of the file it names, so the stamp follows the data rather
/// than where it lives.
pub fn config_hash(config: &ScenarioConfig) -> Result<String, HarnessError> {
    let mut c = config.clone();
    c.seed = 0;
    if let WorkloadSource::Trace { path, .. } = &mut c.workload {
        let bytes = fs::read(&*path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        *path = PathBuf::from(format!("sha256:{}", hex::encode(Sha256::digest(&bytes))));
    }
    let json = serde_json::to_string(&c).expect("scenario configs serialize");
    let mut h = hex::encode(Sha256::digest(json.as_bytes()));
    h.truncate(HASH_LEN);
    Ok(h)
}

pub fn format_value(kind: MetricKind, v: Option<f64>) -> String {
    let Some(x) = v else {
        return String::new();
    };
    // -0.0 would print with a sign
    let x = if x == 0.0 { 0.0 } else { x };
    match kind {
        MetricKind::Millis | MetricKind::Count => format!("{x:.1}"),
        MetricKind::Fraction | MetricKind::Rate => format!("{x:.2}"),
    }
}

const IDENTITY: [&str; 17] = [
    "experiment",
    "cell",
    "regime",
    "strategy",
    "information",
    "policy",
    "noise",
    "variant",
    "context_only",
    "physics",
    "n",
    "seeds",
    "t1",
    "t2",
    "t3",
    "backoff_base_ms",
    "config_hash",
];

fn identity(r: &CellResult, seeds: &str) -> Vec<String> {
    let c = &r.cell.config;
    let p = c.overload.policy;
    let policy = if c.strategy.overload_enabled() {
        p.kind.name()
    } else {
        "off"
    };
    vec![
        r.cell.experiment.name().to_string(),
        r.cell.label.clone(),
        r.cell.regime.clone(),
        c.strategy.name().to_string(),
        c.information.name().to_string(),
        policy.to_string(),
        c.noise.to_string(),
        r.cell.variant.clone(),
        r.cell.context_only.to_string(),
        serde_json::to_value(c.physics_mode)
            .unwrap()
            .as_str()
            .unwrap_or_default()
            .to_string(),
        c.n.to_string(),
        seeds.to_string(),
        format!("{:.3}", p.t1),
        format!("{:.3}", p.t2),
        format!("{:.3}", p.t3),
        format_value(MetricKind::Millis, Some(c.overload.backoff.base_ms)),
        r.hash.clone(),
    ]
}

fn metric_names(results: &[CellResult]) -> Vec<&'static str> {
    results
        .first()
        .map(|r| r.summary.stats.iter().map(|(n, _, _)| *n).collect())
        .unwrap_or_default()
}

pub fn summary_table(results: &[CellResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = IDENTITY.iter().map(|s| s.to_string()).collect();
    for m in metric_names(results) {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.push("undefined".into());
    let rows = results.iter().map(summary_row).collect();
    (header, rows)
}

pub fn summary_row(r: &CellResult) -> Vec<String> {
    let seeds: Vec<String> = r.runs.iter().map(|s| s.seed.to_string()).collect();
    let mut row = identity(r, &seeds.join(" "));
    let mut undefined = Vec::new();
    for (name, kind, stat) in &r.summary.stats {
        row.push(format_value(*kind, stat.mean));
        row.push(format_value(*kind, stat.std));
        if stat.excluded > 0 {
            undefined.push(format!("{name}:{}", stat.excluded));
        }
    }
    row.push(undefined.join(";"));
    row
}

/// One row per `(cell, seed)` with the raw metrics and the RunLog audits.
pub fn runs_table(results: &[CellResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["experiment", "cell", "seed", "config_hash"]
        .map(String::from)
        .to_vec();
    header.extend(metric_names(results).into_iter().map(String::from));
    header.extend(
        [
            "short_defers_or_rejects",
            "feasibility_violations",
            "work_conservation_violations",
        ]
        .map(String::from),
    );
    let mut rows = Vec::new();
    for r in results {
        for s in &r.runs {
            let mut row = vec![
                r.cell.experiment.name().to_string(),
                r.cell.label.clone(),
                s.seed.to_string(),
                r.hash.clone(),
            ];
            row.extend(
                s.summary
                    .metrics()
                    .into_iter()
                    .map(|(_, k, v)| format_value(k, v)),
            );
            let a = s.audit;
            row.extend(
                [
                    a.short_defers_or_rejects,
                    a.feasibility_violations,
                    a.work_conservation_violations,
                ]
                .map(|v| v.to_string()),
            );
            rows.push(row);
        }
    }
    (header, rows)
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize)]
struct CellDump<'a> {
    cell: &'a str,
    config_hash: &'a str,
    config: &'a ScenarioConfig,
}

/// One JSON object per cell: the full config behind each stamp.
pub fn write_cells_jsonl(path: &Path, results: &[CellResult]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for r in results {
        let dump = CellDump {
            cell: &r.cell.label,
            config_hash: &r.hash,
            config: &r.cell.config,
        };
        out.push_str(&serde_json::to_string(&dump).expect("scenario configs serialize"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    files: Vec<String>,
    cells: usize,
    declared_cells: usize,
    seeds: &'a [u64],
    n: usize,
    physics: clientsched_core::provider::PhysicsMode,
    percentile: &'static str,
    makespan_origin: &'static str,
    std: &'static str,
}

pub fn write_manifest(
    path: &Path,
    experiment: Experiment,
    settings: &Settings,
    cells: usize,
    files: &[PathBuf],
) -> Result<(), HarnessError> {
    let m = Manifest {
        experiment: experiment.name(),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        cells,
        declared_cells: experiment.declared_cells(),
        seeds: &settings.seeds,
        n: settings.n,
        physics: settings.physics,
        percentile: "nearest_rank",
        makespan_origin: "first_arrival",
        std: "sample",
    };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    pub fit: CalibrationFit,
}

pub fn calibrate(source: Option<&Path>) -> Result<CalibrationReport, HarnessError> {
    let rows = match source {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| HarnessError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            read_calibration_csv(f)?
        }
        None => read_calibration_csv(MEASURED_CALIBRATION_CSV.as_bytes())?,
    };
    let points: Vec<_> = rows.iter().map(CalibrationRow::point).collect();
    let fit = fit_calibration(&points)?;
    Ok(CalibrationReport { rows, fit })
}

/// The bucket table with fitted values and residuals.
pub fn calibration_table(r: &CalibrationReport) -> (Vec<String>, Vec<Vec<String>>) {
    let header = [
        "bucket",
        "count",
        "mean_tokens",
        "std_tokens",
        "mean_latency_ms",
        "std_latency_ms",
        "fitted_latency_ms",
        "residual_ms",
    ]
    .map(String::from)
    .to_vec();
    let ms = |v: f64| format_value(MetricKind::Millis, Some(v));
    let rows = r
        .rows
        .iter()
        .map(|row| {
            let fitted = r.fit.intercept_ms + r.fit.slope_ms_per_token * row.mean_tokens;
            vec![
                row.bucket.clone(),
                row.count.to_string(),
                format!("{:.1}", row.mean_tokens),
                format!("{:.1}", row.std_tokens),
                ms(row.mean_latency_ms),
                ms(row.std_latency_ms),
                ms(fitted),
                ms(row.mean_latency_ms - fitted),
            ]
        })
        .collect();
    (header, rows)
}

pub fn calibration_fit_table(r: &CalibrationReport) -> (Vec<String>, Vec<Vec<String>>) {
    let header = [
        "slope_ms_per_token",
        "intercept_ms",
        "r2",
        "points",
        "requests",
    ]
    .map(String::from)
    .to_vec();
    let requests: f64 = r.rows.iter().map(|row| row.count).sum();
    let row = vec![
        format!("{:.4}", r.fit.slope_ms_per_token),
        format!("{:.2}", r.fit.intercept_ms),
        format!("{:.6}", r.fit.r2),
        r.rows.len().to_string(),
        requests.to_string(),
    ];
    (header, vec![row])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_by_kind() {
        assert_eq!(format_value(MetricKind::Millis, Some(354.96)), "355.0");
        assert_eq!(format_value(MetricKind::Fraction, Some(0.996)), "1.00");
        assert_eq!(format_value(MetricKind::Rate, Some(1.4)), "1.40");
        assert_eq!(format_value(MetricKind::Count, Some(-0.0)), "0.0");
        assert_eq!(format_value(MetricKind::Millis, None), "");
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.seed = 17;
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.noise = 0.1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), HASH_LEN);
    }

    #[test]
    fn measured_fit_matches_oracle() {
        let r = calibrate(None).unwrap();
        assert!((r.fit.slope_ms_per_token - 19.496653363666585).abs() < 1e-9);
        let (_, rows) = calibration_fit_table(&r);
        assert_eq!(rows[0][..2], ["19.4967".to_string(), "1900.46".to_string()]);
        let (header, rows) = calibration_table(&r);
        assert_eq!(header.len(), rows[0].len());
        assert_eq!(rows.len(), 3);
    }
}
