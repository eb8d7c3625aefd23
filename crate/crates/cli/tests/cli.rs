use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn shellmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shellmg")).args(args).output().expect("binary runs")
}

fn solve_in(dir: &Path, extra: &[&str]) -> (i32, Value, String) {
    let mut args = vec!["solve", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = shellmg(&args);
    let summary = fs::read_to_string(dir.join("summary.json")).unwrap();
    let csv = fs::read_to_string(dir.join("history.csv")).unwrap();
    (out.status.code().unwrap(), serde_json::from_str(&summary).unwrap(), csv)
}

#[test]
fn documented_solve_converges_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let (code, summary, csv) = solve_in(
        dir.path(),
        &["--test-case", "balanced-flow", "--N", "0.01873", "--levels", "4", "--nr", "64", "--solver", "richardson", "--prec", "full"],
    );
    assert_eq!(code, 0);
    assert_eq!(summary["status"], "converged");
    assert!(summary["iterations"].as_u64().unwrap() <= 12);
    assert_eq!(summary["format_version"], 1);
    assert_eq!(summary["config"]["nr"], 64);
    assert_eq!(summary["config"]["prec"], "full");
    for phase in ["assembly", "hierarchy", "solve"] {
        assert!(summary["seconds"][phase].as_f64().unwrap() >= 0.0);
    }
    assert!(csv.starts_with("iter,res_norm,rel_res,seconds\n"));
}

#[test]
fn factorized_matches_full_when_separable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = ["--levels", "3", "--nr", "16"];
    let (_, full, _) = solve_in(a.path(), &[&common[..], &["--prec", "full"]].concat());
    let (_, fac, _) = solve_in(b.path(), &[&common[..], &["--prec", "factorized"]].concat());
    assert_eq!(full["iterations"], fac["iterations"]);
}

#[test]
fn loose_tolerance_stops_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let (code, summary, _) = solve_in(dir.path(), &["--levels", "2", "--nr", "8", "--tol", "1"]);
    assert_eq!(code, 0);
    assert!(summary["iterations"].as_u64().unwrap() <= 1);
}

#[test]
fn iteration_cap_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, summary, _) = solve_in(dir.path(), &["--levels", "2", "--nr", "8", "--max-iter", "1", "--tol", "1e-12"]);
    assert_eq!(code, 2);
    assert_eq!(summary["status"], "max_iter");
}

#[test]
fn sequential_runs_are_bitwise_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--threads", "1", "--levels", "3", "--nr", "16", "--solver", "bicgstab", "--seed", "9"];
    let (_, _, csv_a) = solve_in(a.path(), &args);
    let (_, _, csv_b) = solve_in(b.path(), &args);
    let strip = |csv: &str| csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_owned()).collect::<Vec<_>>();
    assert_eq!(strip(&csv_a), strip(&csv_b));
}

#[test]
fn configuration_errors_exit_with_four() {
    for args in [
        &["solve", "--relax", "2.5"][..],
        &["solve", "--N", "0.01"],
        &["solve", "--test-case", "external-profiles"],
        &["solve", "--coarse", "often"],
        &["solve", "--no-such-flag"],
        &["timing", "--nr-list", "8,8,8", "--levels", "1"],
        &["grid-info", "--levels", "99"],
    ] {
        let out = shellmg(args);
        assert_eq!(out.status.code(), Some(4), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(shellmg(&["--help"]).status.code(), Some(0));
    assert_eq!(shellmg(&["solve", "--help"]).status.code(), Some(0));
}

#[test]
fn mismatched_profile_file_is_rejected() {
    use shellmg::geometry::GridHierarchy;
    use shellmg::profile_io::{save_profiles, Encoding};
    use shellmg::profiles::ProfileSet;

    let dir = tempfile::tempdir().unwrap();
    let grids = GridHierarchy::build(2).unwrap();
    let path = dir.path().join("p.json");
    let set = ProfileSet::constant(grids.finest(), 8, 1.0, 1.0, 1.0, 0.0);
    save_profiles(&set, grids.finest(), &path, Encoding::Decimal).unwrap();
    let p = path.to_str().unwrap();
    let out = dir.path().to_str().unwrap();

    let ok = shellmg(&["solve", "--test-case", "external-profiles", "--profiles", p, "--levels", "2", "--nr", "8", "--out", out]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let wrong_grid = shellmg(&["solve", "--test-case", "external-profiles", "--profiles", p, "--levels", "3", "--nr", "8", "--out", out]);
    assert_eq!(wrong_grid.status.code(), Some(4));
    let wrong_nr = shellmg(&["solve", "--test-case", "external-profiles", "--profiles", p, "--levels", "2", "--nr", "4", "--out", out]);
    assert_eq!(wrong_nr.status.code(), Some(4));
}

#[test]
fn verify_writes_report_and_flags_out_of_theory_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = shellmg(&["verify", "--epsilons", "0,8", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("outside the theory"));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("theory.json")).unwrap()).unwrap();
    let first = &report["report"]["perturbation"][0][1];
    for key in ["delta", "rho_factorized", "rho_full", "bound", "pass"] {
        assert!(!first[key].is_null(), "{key}");
    }
}

#[test]
fn timing_reports_a_linear_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = shellmg(&[
        "timing", "--levels", "2", "--nr-list", "8,16,32", "--repetitions", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
    let r2 = report["model"]["r_squared"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r2));
    assert_eq!(report["model"]["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn grid_info_lists_every_level() {
    let out = shellmg(&["grid-info", "--levels", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["summary"]["levels"].as_array().unwrap().len(), 3);
    assert_eq!(v["summary"]["levels"][2]["cells"], 320);
}
