//! End-to-end checks of the command-line binary: exit codes, printed
//! diagnostics, and the manifest-headed CSV files each subcommand writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairmech::report;

const BIN: &str = env!("CARGO_BIN_EXE_fairmech");

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/example.toml")
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("FAIRMECH_THREADS");
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args, &[]);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn read_summary(dir: &Path, file: &str) -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
    report::read_csv(&dir.join(file)).expect("csv written")
}

#[test]
fn solve_dynamic_writes_interim_table_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = example_config();
    let stdout = run_ok(&[
        "solve-dynamic",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(stdout.contains("root interim values"));
    assert!(stdout.contains("round-1 mechanism: boundary shift"));
    assert!(stdout.contains("wrote "));

    let (header, columns, rows) = read_summary(dir.path(), "dynamic_interim.csv");
    assert!(header.iter().any(|l| l == "# command: solve-dynamic"));
    assert!(header.iter().any(|l| l == "# seed: 0"));
    assert!(header.iter().any(|l| l.starts_with("# oracle_calls: ")));
    assert!(header.iter().any(|l| l
        .strip_prefix("# config_sha256: ")
        .is_some_and(|h| h.len() == 64)));
    assert_eq!(
        columns,
        ["round", "r1", "r2", "feasible", "regime", "theta", "mu", "nu1", "nu2"]
    );
    // Two rounds reachable from the root: the root itself plus one child per
    // possible round-1 winner.
    assert_eq!(rows.len(), 3);
    let root = &rows[0];
    assert_eq!(root[0], "1");
    assert_eq!(root[3], "true");
    assert_eq!(root[4], "boundary");
    let r1: f64 = root[1].parse().unwrap();
    assert!((r1 - 0.2 * 1.99).abs() < 1e-12, "root residual {r1}");
    let theta: f64 = root[5].parse().unwrap();
    assert!(
        (theta - 0.027674).abs() < 1e-4,
        "root boundary shift {theta}"
    );
}

#[test]
fn simulate_reproduces_runs_and_honors_overrides() {
    let config = example_config();
    let run_once = |dir: &Path, seed: &str| {
        run_ok(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            seed,
            "--replications",
            "300",
        ]);
        read_summary(dir, "simulate_summary.csv")
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let (header_a, columns, rows_a) = run_once(a.path(), "7");
    let (_, _, rows_b) = run_once(b.path(), "7");
    let (_, _, rows_c) = run_once(c.path(), "8");

    assert!(header_a.iter().any(|l| l == "# seed: 7"));
    assert_eq!(columns[0], "replications");
    assert_eq!(rows_a[0][0], "300");
    assert_eq!(rows_a, rows_b, "same seed must reproduce the summary");
    let revenue = columns.iter().position(|c| c == "revenue_mean").unwrap();
    assert_ne!(rows_a[0][revenue], rows_c[0][revenue]);
}

#[test]
fn verify_reports_epic_and_ir_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = example_config();
    let stdout = run_ok(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--grid",
        "16",
        "--cells",
        "17",
    ]);
    assert!(stdout.contains("max EPIC violation:"));
    assert!(stdout.contains("max IR violation:"));

    let (_, columns, rows) = read_summary(dir.path(), "verify_report.csv");
    assert_eq!(
        columns,
        [
            "check",
            "max_violation",
            "worst_round",
            "worst_group",
            "worst_value"
        ]
    );
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let violation: f64 = row[1].parse().unwrap();
        assert!(violation <= 1e-6, "{} violation {violation}", row[0]);
    }
}

#[test]
fn approx_schemes_write_summaries_and_validate_flags() {
    let config = example_config();
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "approx",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--scheme",
        "early_stop",
        "--epsilon",
        "0.05",
        "--replications",
        "300",
    ]);
    let (_, columns, rows) = read_summary(dir.path(), "approx_summary.csv");
    assert_eq!(columns[0], "scheme");
    assert_eq!(rows[0][0], "early_stop");

    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "approx",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--scheme",
        "bucketed",
        "--epsilon",
        "0.05",
        "--beta",
        "0.5",
        "--replications",
        "300",
    ]);
    let (_, _, rows) = read_summary(dir.path(), "approx_summary.csv");
    assert_eq!(rows[0][0], "bucketed");

    let missing_beta = run(
        &[
            "approx",
            "--config",
            config.to_str().unwrap(),
            "--scheme",
            "bucketed",
        ],
        &[],
    );
    assert_eq!(exit_code(&missing_beta), 2);
    assert!(String::from_utf8_lossy(&missing_beta.stderr).contains("--beta"));
}

#[test]
fn experiment_writes_grid_with_contract_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = example_config();
    run_ok(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--replications",
        "50",
        "--grid-max",
        "0.1",
        "--grid-step",
        "0.1",
    ]);
    let (header, columns, rows) = read_summary(dir.path(), "experiment_grid.csv");
    assert!(header.iter().all(|l| !l.starts_with("# oracle_calls")));
    assert_eq!(
        columns,
        [
            "alpha1",
            "alpha2",
            "d_seller",
            "d_group1",
            "d_group2",
            "se_seller",
            "se_group1",
            "se_group2",
            "feasible"
        ]
    );
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][..2], ["0".to_string(), "0".to_string()]);
    assert_eq!(rows[0][2], "0", "baseline cell pairs with itself exactly");
    assert!(rows.iter().all(|r| r[8] == "true"));
}

#[test]
fn error_paths_use_contract_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = example_config();

    let missing = run(&["simulate", "--config", "/nonexistent/run.toml"], &[]);
    assert_eq!(exit_code(&missing), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[auction]\nT = 2\nn = 1\ndelta = 1.5\nalpha1 = 0.2\nalpha2 = 0.2\n\
         [group1.all]\nkind = \"uniform\"\nlo = 0.0\nhi = 1.0\n\
         [group2.all]\nkind = \"uniform\"\nlo = -0.5\nhi = 0.5\n",
    )
    .unwrap();
    let invalid = run(&["simulate", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&invalid), 2);
    assert!(String::from_utf8_lossy(&invalid.stderr).starts_with("error: "));

    let tight = dir.path().join("infeasible.toml");
    std::fs::write(
        &tight,
        "[auction]\nT = 2\nn = 1\ndelta = 0.5\nalpha1 = 0.4\nalpha2 = 0.4\n\
         [group1.all]\nkind = \"uniform\"\nlo = 0.0\nhi = 1.0\n\
         [group2.all]\nkind = \"uniform\"\nlo = -0.5\nhi = 0.5\n",
    )
    .unwrap();
    let infeasible = run(&["solve-dynamic", "--config", tight.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&infeasible), 3);

    let bad_threads = run(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--replications",
            "50",
        ],
        &[("FAIRMECH_THREADS", "many")],
    );
    assert_eq!(exit_code(&bad_threads), 2);

    let capped = run(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--replications",
            "50",
        ],
        &[("FAIRMECH_THREADS", "2")],
    );
    assert_eq!(exit_code(&capped), 0);
}
