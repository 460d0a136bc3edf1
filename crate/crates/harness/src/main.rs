use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clientsched_core::provider::PhysicsMode;
use clientsched_harness::experiments::cells;
use clientsched_harness::settings::parse_seeds;
use clientsched_harness::{
    run_experiment, Experiment, FileConfig, HarnessError, Overrides, Settings,
};

/// Client-side LLM API scheduling simulator: runs the experiment matrix and
/// writes CSV tables.
#[derive(Parser)]
#[command(name = "clientsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, or `all` of them in order.
    Run {
        experiment: String,
        /// Only run the cell with this label (see the `cell` column).
        #[arg(long)]
        cell: Option<String>,
    },
    /// Check the settings and every cell config; lists all violations.
    Validate,
    /// List the experiments with their cell counts and output tables.
    List,
}

#[derive(Args)]
struct Flags {
    /// TOML settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seeds, e.g. `0-4` or `0,3,7`.
    #[arg(long, global = true, value_parser = parse_seeds)]
    seeds: Option<Vec<u64>>,
    /// Requests per run.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// `scaled` or `calibrated`.
    #[arg(long, global = true, value_parser = parse_physics)]
    physics: Option<PhysicsMode>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Token trace for trace_replay.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Bucket summary CSV for the calibration fit.
    #[arg(long, global = true)]
    calibration: Option<PathBuf>,
    /// Also write every run's request log and severity trace.
    #[arg(long, global = true)]
    runlogs: bool,
}

fn parse_physics(s: &str) -> Result<PhysicsMode, String> {
    match s {
        "scaled" => Ok(PhysicsMode::Scaled),
        "calibrated" => Ok(PhysicsMode::Calibrated),
        other => Err(format!(
            "unknown physics mode {other:?} (scaled or calibrated)"
        )),
    }
}

fn settings(flags: &Flags) -> Result<Settings, HarnessError> {
    let file = flags.config.as_deref().map(FileConfig::load).transpose()?;
    let overrides = Overrides {
        seeds: flags.seeds.clone(),
        n: flags.n,
        physics: flags.physics,
        parallelism: flags.parallelism,
        out: flags.out.clone(),
        trace: flags.trace.clone(),
        calibration: flags.calibration.clone(),
        runlogs: flags.runlogs,
    };
    Settings::resolve(file, &overrides)
}

fn run(experiment: &str, cell: Option<&str>, flags: &Flags) -> Result<(), HarnessError> {
    let s = settings(flags)?;
    let list: Vec<Experiment> = if experiment == "all" {
        Experiment::ALL.to_vec()
    } else {
        vec![experiment.parse()?]
    };
    for e in list {
        for path in run_experiment(e, &s, cell)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn validate(flags: &Flags) -> Result<bool, HarnessError> {
    let s = settings(flags)?;
    let base_errors = s.base.validate().err().map(|e| e.0).unwrap_or_default();
    let mut ok = base_errors.is_empty();
    for v in &base_errors {
        println!("base: {v}");
    }
    if let Err(e) = std::fs::metadata(&s.trace) {
        ok = false;
        println!("trace {}: {e}", s.trace.display());
    }
    if let Err(e) = clientsched_harness::report::calibrate(s.calibration.as_deref()) {
        ok = false;
        println!("{e}");
    }
    let mut total = 0;
    for e in Experiment::ALL {
        for c in cells(e, &s.base, &s.trace) {
            total += 1;
            if let Err(err) = c.config.validate() {
                ok = false;
                // problems already reported for the base config are not repeated per cell
                for v in err.0.iter().filter(|v| !base_errors.contains(v)) {
                    println!("{e} {}: {v}", c.label);
                }
            }
        }
    }
    if ok {
        println!("ok: {total} cells x {} seeds, n = {}", s.seeds.len(), s.n);
    }
    Ok(ok)
}

fn list() {
    for e in Experiment::ALL {
        println!(
            "{:16} {:>3} cells  {}.csv  {}",
            e.name(),
            e.declared_cells(),
            e.table(),
            e.describe()
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { experiment, cell } => {
            run(experiment, cell.as_deref(), &cli.flags).map(|_| true)
        }
        Command::Validate => validate(&cli.flags),
        Command::List => {
            list();
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
