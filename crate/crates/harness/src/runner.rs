//! Runs experiment cells over a worker pool and writes their tables.

use std::fs;
use std::path::{Path, PathBuf};

use clientsched_core::{
    aggregate, run, summarize, CellSummary, RunLog, RunSummary, ScenarioConfig,
};
use rayon::prelude::*;

use crate::experiments::{cells, Cell, Experiment};
use crate::report::{self, CalibrationReport};
use crate::settings::Settings;
use crate::HarnessError;

/// Per-run audit counts taken from the RunLog before it is dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub short_defers_or_rejects: usize,
    pub feasibility_violations: usize,
    pub work_conservation_violations: usize,
}

impl Audit {
    pub fn of(log: &RunLog) -> Audit {
        Audit {
            short_defers_or_rejects: log.short_defers_or_rejects(),
            feasibility_violations: log.feasibility_violations(),
            work_conservation_violations: log.work_conservation_violations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub summary: RunSummary,
    pub audit: Audit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub hash: String,
    /// In seed order.
    pub runs: Vec<SeedRun>,
    pub summary: CellSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Cells(Vec<CellResult>),
    Calibration(CalibrationReport),
}

impl Output {
    pub fn cells(&self) -> &[CellResult] {
        match self {
            Output::Cells(c) => c,
            Output::Calibration(_) => &[],
        }
    }
}

/// Runs an experiment in memory. `only` restricts it to one cell label.
pub fn execute(
    experiment: Experiment,
    settings: &Settings,
    only: Option<&str>,
) -> Result<Output, HarnessError> {
    if experiment == Experiment::Calibration {
        return Ok(Output::Calibration(report::calibrate(
            settings.calibration.as_deref(),
        )?));
    }
    let base = ScenarioConfig {
        n: settings.n,
        ..settings.base.clone()
    };
    let mut list = cells(experiment, &base, &settings.trace);
    if let Some(label) = only {
        list.retain(|c| c.label == label);
        if list.is_empty() {
            return Err(HarnessError::UnknownCell {
                experiment: experiment.name().to_string(),
                label: label.to_string(),
            });
        }
    }
    for c in &list {
        c.config
            .validate()
            .map_err(|source| HarnessError::InvalidCell {
                cell: c.label.clone(),
                source,
            })?;
    }
    let hashes = list
        .iter()
        .map(|c| report::config_hash(&c.config))
        .collect::<Result<Vec<_>, _>>()?;

    let runlog_dir = if settings.runlogs {
        let dir = settings.out.join("runlogs").join(experiment.name());
        fs::create_dir_all(&dir).map_err(|source| HarnessError::OutDir {
            path: dir.clone(),
            source,
        })?;
        Some(dir)
    } else {
        None
    };

    let jobs: Vec<(usize, u64)> = (0..list.len())
        .flat_map(|i| settings.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallelism)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    // ordered collect: results come back in job order whatever finishes first
    let runs: Vec<SeedRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| run_one(&list[i], seed, runlog_dir.as_deref()))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let per_cell = settings.seeds.len();
    let mut runs = runs.into_iter();
    let results = list
        .into_iter()
        .zip(hashes)
        .map(|(cell, hash)| {
            let runs: Vec<SeedRun> = runs.by_ref().take(per_cell).collect();
            let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
            CellResult {
                cell,
                hash,
                runs,
                summary: aggregate(&summaries),
            }
        })
        .collect();
    Ok(Output::Cells(results))
}

fn run_one(cell: &Cell, seed: u64, runlog_dir: Option<&Path>) -> Result<SeedRun, HarnessError> {
    let mut cfg = cell.config.clone();
    cfg.seed = seed;
    let log = run(&cfg).map_err(|source| HarnessError::Run {
        cell: cell.label.clone(),
        seed,
        source,
    })?;
    if let Some(dir) = runlog_dir {
        let stem = format!("{}_seed{seed}", file_stem(&cell.label));
        report::write_file(&dir.join(format!("{stem}.csv")), log.to_csv().as_bytes())?;
        report::write_file(
            &dir.join(format!("{stem}_severity.csv")),
            log.severity_csv().as_bytes(),
        )?;
    }
    Ok(SeedRun {
        seed,
        summary: summarize(&log),
        audit: Audit::of(&log),
    })
}

/// Cell label turned into a file name: `balanced/high/t3-20%` becomes
/// `balanced_high_t3-20pct`.
pub fn file_stem(label: &str) -> String {
    label
        .replace('%', "pct")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '+') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Creates `dir` if needed and checks that files can be written there.
pub fn ensure_out_dir(dir: &Path) -> Result<(), HarnessError> {
    let err = |source| HarnessError::OutDir {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".clientsched_write_probe");
    fs::write(&probe, b"").map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

/// Runs an experiment and writes its files into `settings.out`. Returns the
/// paths written, main table first.
pub fn run_experiment(
    experiment: Experiment,
    settings: &Settings,
    only: Option<&str>,
) -> Result<Vec<PathBuf>, HarnessError> {
    ensure_out_dir(&settings.out)?;
    let out = &settings.out;
    let table = out.join(format!("{}.csv", experiment.table()));
    let mut files = Vec::new();
    let cell_count = match execute(experiment, settings, only)? {
        Output::Calibration(r) => {
            let (h, rows) = report::calibration_table(&r);
            report::write_csv(&table, &h, &rows)?;
            let fit = out.join("calibration_fit.csv");
            let (h, rows) = report::calibration_fit_table(&r);
            report::write_csv(&fit, &h, &rows)?;
            files.extend([table, fit]);
            0
        }
        Output::Cells(results) => {
            let (h, rows) = report::summary_table(&results);
            report::write_csv(&table, &h, &rows)?;
            let runs = out.join(format!("{}_runs.csv", experiment.name()));
            let (h, rows) = report::runs_table(&results);
            report::write_csv(&runs, &h, &rows)?;
            let dump = out.join(format!("{}_cells.jsonl", experiment.name()));
            report::write_cells_jsonl(&dump, &results)?;
            files.extend([table, runs, dump]);
            results.len()
        }
    };
    let manifest = out.join(format!("{}_manifest.json", experiment.name()));
    report::write_manifest(&manifest, experiment, settings, cell_count, &files)?;
    files.push(manifest);
    Ok(files)
}
