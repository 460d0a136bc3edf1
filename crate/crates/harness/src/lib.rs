//! Experiment matrix, configuration and CSV output for the scheduling simulator.
//!
//! An experiment is a named list of cells generated from a cross product of
//! axes. Each cell is one [`ScenarioConfig`] run across every seed; the
//! runner fans `(cell, seed)` jobs out over a worker pool and merges them
//! back in cell order, so the tables do not depend on scheduling.

pub mod experiments;
pub mod report;
pub mod runner;
pub mod settings;

use std::path::PathBuf;

use clientsched_core::config::ConfigError;
use clientsched_core::provider::CalibrationError;
use clientsched_core::workload::WorkloadError;
use clientsched_core::RunError;
use thiserror::Error;

pub use experiments::{Cell, Experiment};
pub use runner::{execute, run_experiment, CellResult, Output, SeedRun};
pub use settings::{FileConfig, Overrides, Settings};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment {0:?}; expected one of {names}", names = Experiment::names().join(", "))]
    UnknownExperiment(String),
    #[error("no cell labelled {label:?} in {experiment}")]
    UnknownCell { experiment: String, label: String },
    #[error("config {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{0}")]
    Settings(String),
    #[error("cell {cell}: {source}")]
    InvalidCell { cell: String, source: ConfigError },
    #[error("output directory {path} is not writable: {source}")]
    OutDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cell {cell}, seed {seed}: {source}")]
    Run {
        cell: String,
        seed: u64,
        source: RunError,
    },
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("trace: {0}")]
    Workload(#[from] WorkloadError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}
