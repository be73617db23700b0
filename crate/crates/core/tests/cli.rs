use std::process::{Command, Output};

use dagflow::ExecReport;

fn dagflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagflow")).args(args).output().expect("spawn dagflow")
}

fn reports(out: &Output) -> Vec<ExecReport> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| ExecReport::from_json_line(l).expect("report line"))
        .collect()
}

#[test]
fn gemm_verify_exits_zero_with_one_report_per_rank() {
    let out = dagflow(&["run", "gemm", "--n", "256", "--ib", "32", "--ranks", "4", "--workers", "4", "--np", "2", "--nq", "2", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reps = reports(&out);
    assert_eq!(reps.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn sort_verify_exits_zero() {
    let out = dagflow(&["run", "sort", "--n", "1000000", "--log-bins", "8", "--ranks", "4", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(reports(&out).len(), 4);
}

#[test]
fn fig1_dot_shows_two_families() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.dot");
    let out = dagflow(&["run", "fig1", "--dot", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let dot = std::fs::read_to_string(&path).unwrap();
    assert!(dot.starts_with("digraph"));
    assert_eq!(dot.matches("gemm#").count(), 5);
    assert_eq!(dot.matches("scale#").count(), 1);
}

#[test]
fn bad_parameters_exit_two() {
    assert_eq!(dagflow(&["run", "gemm", "--n", "100", "--ib", "32"]).status.code(), Some(2));
    assert_eq!(dagflow(&["run", "gemm", "--ranks", "0"]).status.code(), Some(2));
    assert_eq!(dagflow(&["run", "nosuch"]).status.code(), Some(2));
    assert_eq!(dagflow(&["run", "gemm", "--bogus"]).status.code(), Some(2));
    assert_eq!(dagflow(&["run", "strassen", "--n", "96", "--ib", "32"]).status.code(), Some(2));
}

#[test]
fn sockets_mode_spawns_ranks() {
    let out = dagflow(&["run", "gemm", "--n", "64", "--ib", "16", "--ranks", "3", "--np", "2", "--mode", "sockets", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reps = reports(&out);
    assert_eq!(reps.len(), 3);
    assert!(reps.iter().all(|r| r.ops_run > 0));
}

#[test]
fn bench_prints_table_with_speedup() {
    let out = dagflow(&["bench", "fig1", "--ranks", "1", "--workers", "1,2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("speedup"));
    assert!(lines[1].trim_end().ends_with("1.00"));
}

#[test]
fn bench_without_baseline_omits_speedup() {
    let out = dagflow(&["bench", "fig1", "--ranks", "2", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("speedup"));
}
