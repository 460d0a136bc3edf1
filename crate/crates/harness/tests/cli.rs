use std::path::Path;
use std::process::Command;

use clientsched_core::ScenarioConfig;
use clientsched_harness::report::config_hash;
use clientsched_harness::{run_experiment, Experiment, HarnessError, Settings};

fn small(out: &Path) -> Settings {
    Settings {
        seeds: vec![0, 1],
        n: 40,
        out: out.to_path_buf(),
        ..Settings::default()
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clientsched"))
}

#[test]
fn tables_have_one_row_per_declared_cell() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path());
    for e in Experiment::ALL {
        let files = run_experiment(e, &s, None).unwrap();
        let (header, rows) = read_csv(&files[0]);
        if e == Experiment::Calibration {
            assert_eq!(rows.len(), 3);
            continue;
        }
        assert_eq!(rows.len(), e.declared_cells(), "{e}");
        assert_eq!(header.last().map(String::as_str), Some("undefined"));
        assert!(rows.iter().all(|r| r.len() == header.len()));
        let (_, runs) = read_csv(&files[1]);
        assert_eq!(runs.len(), e.declared_cells() * s.seeds.len(), "{e}");
    }
}

#[test]
fn main_benchmark_flags_direct_naive_as_context() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_experiment(Experiment::MainBenchmark, &small(dir.path()), None).unwrap();
    let (header, rows) = read_csv(&files[0]);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for r in rows {
        assert_eq!(
            r[col("context_only")] == "true",
            r[col("strategy")] == "direct_naive"
        );
    }
}

#[test]
fn output_does_not_depend_on_parallelism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for e in [Experiment::InfoLadder, Experiment::Sensitivity] {
        let fa = run_experiment(
            e,
            &Settings {
                parallelism: 1,
                ..small(a.path())
            },
            None,
        )
        .unwrap();
        let fb = run_experiment(
            e,
            &Settings {
                parallelism: 8,
                ..small(b.path())
            },
            None,
        )
        .unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(
                std::fs::read(x).unwrap(),
                std::fs::read(y).unwrap(),
                "{}",
                x.display()
            );
        }
    }
}

#[test]
fn stamps_reproduce_their_rows() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path());
    let files = run_experiment(Experiment::OverloadPolicy, &s, None).unwrap();
    let (header, rows) = read_csv(&files[0]);
    let hash_col = header.iter().position(|h| h == "config_hash").unwrap();

    let dump = std::fs::read_to_string(&files[2]).unwrap();
    let dumped: Vec<serde_json::Value> = dump
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(dumped.len(), rows.len());
    for (row, d) in rows.iter().zip(&dumped) {
        let cfg: ScenarioConfig = serde_json::from_value(d["config"].clone()).unwrap();
        assert_eq!(config_hash(&cfg).unwrap(), row[hash_col]);
        assert_eq!(d["config_hash"], row[hash_col].as_str());
    }

    let label = &rows[5][1];
    let one = tempfile::tempdir().unwrap();
    let files =
        run_experiment(Experiment::OverloadPolicy, &small(one.path()), Some(label)).unwrap();
    let (_, single) = read_csv(&files[0]);
    assert_eq!(single, vec![rows[5].clone()]);

    let err = run_experiment(Experiment::OverloadPolicy, &s, Some("nope")).unwrap_err();
    assert!(matches!(err, HarnessError::UnknownCell { .. }));
}

#[test]
fn unwritable_out_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain_file");
    std::fs::write(&file, "x").unwrap();
    let err = run_experiment(Experiment::Fairness, &small(&file.join("sub")), None).unwrap_err();
    assert!(matches!(err, HarnessError::OutDir { .. }), "{err}");
}

#[test]
fn runlogs_are_dumped_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let s = Settings {
        runlogs: true,
        ..small(dir.path())
    };
    run_experiment(Experiment::Fairness, &s, None).unwrap();
    let logs = dir.path().join("runlogs/fairness");
    let count = std::fs::read_dir(&logs).unwrap().count();
    assert_eq!(count, 3 * 2 * 2);
    let text =
        std::fs::read_to_string(logs.join("fairness_mix_high_short_priority_seed1.csv")).unwrap();
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn cli_lists_and_rejects_unknown_experiments() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for e in Experiment::ALL {
        assert!(text.contains(e.name()) && text.contains(e.table()));
    }
    let out = bin().args(["run", "no_such_thing"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn cli_validate_reports_every_violation() {
    assert!(bin().arg("validate").status().unwrap().success());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[scenario]\nnoise = 1.0\n[scenario.overload.policy]\nt1 = 0.5\nt2 = 0.4\n",
    )
    .unwrap();
    let out = bin()
        .args(["validate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("t1 < t2 violated"), "{text}");
    assert!(text.contains("noise_L"), "{text}");
}

#[test]
fn cli_flags_win_over_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("settings.toml");
    std::fs::write(&cfg, "n = 30\nseeds = \"0-1\"\nout = \"from_file\"\n").unwrap();
    let out = bin()
        .args([
            "run",
            "fairness",
            "--n",
            "25",
            "--parallelism",
            "2",
            "--config",
        ])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&dir.path().join("from_file/fairness_comparison_summary.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert!(rows
        .iter()
        .all(|r| r[col("n")] == "25" && r[col("seeds")] == "0 1"));
}

#[test]
fn cli_fits_a_supplied_calibration_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cal.csv");
    std::fs::write(
        &table,
        "bucket,count,mean_tokens,std_tokens,mean_latency_ms,std_latency_ms\na,1,100,0,1100,0\nb,1,300,0,1300,0\n",
    )
    .unwrap();
    let out = bin()
        .args(["run", "calibration", "--out"])
        .arg(dir.path())
        .arg("--calibration")
        .arg(&table)
        .status()
        .unwrap();
    assert!(out.success());
    let (_, rows) = read_csv(&dir.path().join("calibration_fit.csv"));
    assert_eq!(rows[0][..2], ["1.0000".to_string(), "1000.00".to_string()]);
}
