mod common;

use std::process::{Command, Output};

use common::data;

fn gridmcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridmcp")).args(args).output().expect("binary runs")
}

fn case(name: &str) -> String {
    data(name).to_string_lossy().into_owned()
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|k, _| !k.contains("time"));
            m.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn converged_solve_exits_zero_with_json() {
    let out = gridmcp(&["solve", "--case", &case("case9.m")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "converged");
    assert_eq!(v["case"], "case9");
}

#[test]
fn nonconvergence_exits_two() {
    let out = gridmcp(&["solve", "--case", &case("case3120sp.m"), "--solver", "nr"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridmcp(&["solve", "--case", &case("case118.m"), "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn input_errors_exit_one() {
    for args in [
        vec!["solve", "--case", "/nonexistent/case.m"],
        vec!["solve", "--case", "case9.m", "--solver", "simplex"],
        vec!["solve", "--case", "case9.m", "--controls", "gen-voltage,turbines"],
        vec!["solve", "--no-such-flag"],
        vec!["solve", "--case", "case9.m", "--solver", "nr", "--controls", "taps"],
    ] {
        let mut args = args.clone();
        let path = case("case9.m");
        for a in args.iter_mut() {
            if *a == "case9.m" {
                *a = &path;
            }
        }
        let out = gridmcp(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn csv_output_goes_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let out = gridmcp(&["solve", "--case", &case("case14.m"), "--format", "csv", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("record,id,field,value,unit"));
    assert!(text.lines().any(|l| l.starts_with("bus,14,vm,")));
}

#[test]
fn warm_start_from_own_output_is_immediate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sol.json");
    let first = gridmcp(&["solve", "--case", &case("case118.m"), "--out", path.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0));
    let again = gridmcp(&["solve", "--case", &case("case118.m"), "--warm-start", path.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert!(v["iterations"].as_u64().unwrap() <= 1, "{}", v["iterations"]);
}

#[test]
fn repeated_runs_are_identical() {
    let args = ["solve", "--case", &case("case300.m"), "--controls", "gen-voltage"];
    let mut a: serde_json::Value = serde_json::from_slice(&gridmcp(&args).stdout).unwrap();
    let mut b: serde_json::Value = serde_json::from_slice(&gridmcp(&args).stdout).unwrap();
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(a, b);
}

#[test]
fn compare_does_not_depend_on_thread_count() {
    let run = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_gridmcp"))
            .args(["compare", "--case", &case("case9.m"), &case("case14.m"), &case("case118.m")])
            .env("MCP_PF_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        strip_timing(&mut v);
        v
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, format!(r#"{{"case": {:?}, "solver": "fb", "tol": 1e-9}}"#, case("case9.m"))).unwrap();
    let out = gridmcp(&["solve", "--config", cfg.to_str().unwrap(), "--solver", "mcp"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["solver"], "mcp");

    std::fs::write(&cfg, r#"{"case": "x.m", "colour": "blue"}"#).unwrap();
    let out = gridmcp(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bound_sweep_reports_every_width() {
    let out = gridmcp(&["bound-sweep", "--case", &case("case14.m"), "--widths", "0,0.05", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn outage_sweep_rejects_unknown_generators() {
    let out = gridmcp(&["outage-sweep", "--case", &case("case9.m"), "--outages", "99"]);
    assert_eq!(out.status.code(), Some(1));
}
