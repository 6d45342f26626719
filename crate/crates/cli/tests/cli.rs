use std::fs;
use std::path::Path;
use std::process::Command;

use infbsde_cli::run;

fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("infbsde").chain(args.iter().copied()))
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

/// Drops the wall-clock `seconds` column, the only non-reproducible field.
fn without_seconds(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| header[i] != "seconds").collect();
    std::iter::once(csv.lines().next().unwrap())
        .chain(lines)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn grid_solve_default_experiment_writes_ten_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run_args(&[
        "grid-solve",
        "--problem",
        "arctan-const-sigma",
        "--d",
        "1",
        "--ntilde",
        "10",
        "--R",
        "3",
        "--M",
        "40000",
        "--iters",
        "10",
        "--p",
        "2",
        "--seed",
        "7",
        "--out",
        out,
    ]);
    assert_eq!(code, 0);
    let iterations = read(dir.path(), "iterations.csv");
    let mut lines = iterations.lines();
    assert_eq!(lines.next(), Some("n,sup_err_u,sup_err_ubar,seconds"));
    assert_eq!(lines.count(), 10);
    let solution = read(dir.path(), "grid_solution.csv");
    assert!(solution.starts_with("i1,x1,u_1,ubar_11,u_exact_1,ubar_exact_11,err_u,err_ubar"));
    // 2(Ñ + p) + 1 nodes plus a header
    assert_eq!(solution.lines().count(), 26);
    assert!(read(dir.path(), "errors_vs_iteration.svg").starts_with("<svg"));
}

#[test]
fn missing_required_flag_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert_eq!(run_args(&["grid-solve", "--problem", "linear-constant", "--out", out_s]), 2);
    assert_eq!(run_args(&["grid-solve", "--seed", "1", "--out", out_s]), 2);
    assert_eq!(run_args(&["nn-picard", "--problem", "linear-constant", "--out", out_s]), 2);
    assert_eq!(run_args(&["grid-solve", "--problem", "no-such-problem", "--seed", "1", "--out", out_s]), 2);
    assert_eq!(run_args(&["grid-solve", "--problem", "linear-constant", "--seed", "1", "--M", "1", "--out", out_s]), 2);
    assert_eq!(run_args(&["grid-solve", "--bogus"]), 2);
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"problem": "linear-constant", "seed": 1, "n_halff": 3}"#).unwrap();
    let out = dir.path().join("run");
    assert_eq!(run_args(&["grid-solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists());
}

#[test]
fn identical_runs_produce_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "grid-solve".to_string(),
            "--problem".into(),
            "arctan-tanh-sigma".into(),
            "--seed".into(),
            "3".into(),
            "--ntilde".into(),
            "4".into(),
            "--M".into(),
            "300".into(),
            "--iters".into(),
            "3".into(),
            "--dt".into(),
            "0.01".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(std::iter::once("infbsde".to_string()).chain(args(a.to_str().unwrap()))), 0);
    assert_eq!(run(std::iter::once("infbsde".to_string()).chain(args(b.to_str().unwrap()))), 0);
    assert_eq!(read(&a, "grid_solution.csv"), read(&b, "grid_solution.csv"));
    assert_eq!(without_seconds(&read(&a, "iterations.csv")), without_seconds(&read(&b, "iterations.csv")));
    assert_eq!(read(&a, "config_echo.json"), read(&b, "config_echo.json"));
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let code = run_args(&[
        "nn-picard",
        "--problem",
        "linear-constant",
        "--seed",
        "11",
        "--M",
        "200",
        "--iters",
        "2",
        "--steps",
        "15",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let echo = a.join("config_echo.json");
    assert_eq!(run_args(&["nn-picard", "--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]), 0);
    assert_eq!(without_seconds(&read(&a, "nn_trace.csv")), without_seconds(&read(&b, "nn_trace.csv")));
    assert_eq!(read(&a, "net_iter_2.txt"), read(&b, "net_iter_2.txt"));
    assert_eq!(read(&a, "config_echo.json"), read(&b, "config_echo.json"));
    let header = read(&a, "nn_trace.csv");
    assert!(header.starts_with("iteration,loss,du,dubar,seconds\n"));
}

#[test]
fn kz_sweep_with_single_value_matches_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let code = run_args(&[
        "kz-sweep",
        "--problem",
        "arctan-const-sigma",
        "--seed",
        "5",
        "--scheme",
        "nn-direct",
        "--kz",
        "0",
        "--replications",
        "1",
        "--out",
        sweep.to_str().unwrap(),
        "--config",
        &write_cfg(dir.path()),
    ]);
    assert_eq!(code, 0);
    let rows = read(&sweep, "kz_sweep.csv");
    assert!(rows.starts_with("kz,rep,du,dubar\n"));
    let cells: Vec<String> = rows.lines().nth(1).unwrap().split(',').map(String::from).collect();

    let seed = infbsde::simulate::derive_seed(5, 0).to_string();
    let single = dir.path().join("single");
    let code = run_args(&[
        "nn-direct",
        "--problem",
        "arctan-const-sigma",
        "--set",
        "kz=0",
        "--seed",
        &seed,
        "--epochs",
        "2",
        "--steps",
        "5",
        "--Mx",
        "16",
        "--M",
        "10",
        "--out",
        single.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let trace = read(&single, "nn_trace.csv");
    let last: Vec<&str> = trace.lines().last().unwrap().split(',').collect();
    assert_eq!((cells[2].as_str(), cells[3].as_str()), (last[2], last[3]));
    assert!(read(&sweep, "kz_sweep.svg").starts_with("<svg"));
    assert!(read(&sweep, "kz_summary.csv").starts_with("kz,du_min,"));
}

fn write_cfg(dir: &Path) -> String {
    let p = dir.join("sweep.json");
    fs::write(&p, r#"{"direct": {"epochs": 2, "steps_per_epoch": 5, "points": 16, "inner_samples": 10}}"#).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn rate_study_and_contraction_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let rate = dir.path().join("rate");
    let code = run_args(&[
        "rate-study",
        "--problem",
        "arctan-const-sigma",
        "--seed",
        "1",
        "--k",
        "20",
        "--ntildes",
        "2,3,4",
        "--iters",
        "3",
        "--out",
        rate.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = read(&rate, "rate_study.csv");
    assert!(csv.starts_with("ntilde,M,sup_err_u,sup_err_ubar\n"));
    assert_eq!(csv.lines().count(), 4);
    assert!(read(&rate, "rate_study.svg").contains("fit u"));

    let con = dir.path().join("con");
    let code = run_args(&[
        "contraction",
        "--problem",
        "arctan-const-sigma",
        "--seed",
        "1",
        "--M",
        "2000",
        "--out",
        con.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report = read(&con, "contraction_report.csv");
    assert!(report.starts_with("name,value,passed,detail\n"));
    for key in ["kappa_inf,", "c_inf_mc,", "c_p,", "kappa_p,", "constraint: a > theta,"] {
        assert!(report.contains(key), "{key} missing from\n{report}");
    }
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_infbsde");
    let status = Command::new(bin).arg("--help").output().unwrap();
    assert!(status.status.success());
    let status = Command::new(bin).args(["grid-solve"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}
