use std::fs;
use std::path::Path;

use ensemble_control::cli::{run, EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> i32 {
    let mut all = vec!["ensemble-control"];
    all.extend_from_slice(args);
    run(all)
}

fn out(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn solve_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "run");
    assert_eq!(cli(&["solve", "--problem", "decoupled-quadratic", "--method", "oracle", "--out", &o]), EXIT_OK);
    for f in ["manifest.json", "value.csv", "control.csv", "trajectory.csv"] {
        assert!(Path::new(&o).join(f).exists(), "{f}");
    }
    let values = fs::read_to_string(Path::new(&o).join("value.csv")).unwrap();
    assert!(values.starts_with("method,s,value\noracle,0,"));
}

#[test]
fn solve_all_methods_records_cross_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "run");
    assert_eq!(cli(&["solve", "--method", "all", "--steps", "5", "--grid", "21", "--out", &o]), EXIT_OK);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&o).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["results"]["values"].as_array().unwrap().len(), 3);
    let diff = m["results"]["cross_method"]["dp_minus_oracle"].as_f64().unwrap();
    let tol = m["results"]["cross_method"]["dp_tolerance"].as_f64().unwrap();
    assert!(diff.abs() <= tol);
    assert!(m["results"]["cross_method"]["adjoint_minus_oracle"].as_f64().unwrap() >= -1e-9);
    assert!(Path::new(&o).join("value_grid.bin").exists());
}

#[test]
fn dp_capacity_guard_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "method = \"dp\"\n[params]\natoms = 6\n").unwrap();
    let o = out(dir.path(), "run");
    assert_eq!(
        cli(&["solve", "--config", cfg.to_str().unwrap(), "--out", &o]),
        EXIT_USAGE
    );
}

#[test]
fn bad_usage() {
    assert_eq!(cli(&["solve", "--steps", "many"]), EXIT_USAGE);
    assert_eq!(cli(&["solve", "--problem", "no-such-problem"]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
}

#[test]
fn verify_default_passes_and_zero_tolerance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "ok");
    assert_eq!(cli(&["verify", "--out", &o]), EXIT_OK);
    let csv = fs::read_to_string(Path::new(&o).join("reports.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
    assert!(Path::new(&o).join("summary.txt").exists());

    let o = out(dir.path(), "neg");
    assert_eq!(cli(&["verify", "--tol", "0", "--out", &o]), EXIT_CHECK_FAILED);
    let csv = fs::read_to_string(Path::new(&o).join("reports.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",false,")));
}

#[test]
fn verify_static_problem_residuals_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "static");
    assert_eq!(cli(&["verify", "--problem", "static", "--tol", "1e-12", "--out", &o]), EXIT_OK);
}

#[test]
fn bench_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    fs::write(&cfg, "bench_kernels = [\"integrate\"]\nbench_levels = 1\n").unwrap();
    let o = out(dir.path(), "bench");
    assert_eq!(cli(&["bench", "--config", cfg.to_str().unwrap(), "--out", &o]), EXIT_OK);
    let csv = fs::read_to_string(Path::new(&o).join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "kernel,steps,grid,nodes,seconds");
}

#[test]
fn query_reads_saved_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "run");
    assert_eq!(cli(&["solve", "--method", "dp", "--grid", "11", "--out", &o]), EXIT_OK);
    let grid = out(Path::new(&o), "value_grid.bin");
    assert_eq!(cli(&["query", "--grid", &grid, "--t", "0", "--phi", "0.5,-0.5"]), EXIT_OK);
    assert_eq!(cli(&["query", "--grid", &grid, "--t", "0.123", "--phi", "0"]), EXIT_USAGE);
}
