use std::path::{Path, PathBuf};
use std::process::Command;

use cfs_cli::demo::{demo_files, render};
use serde_json::Value;

fn demos() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos")
}

fn demo(rel: &str) -> String {
    demos().join(rel).display().to_string()
}

/// Runs the binary; returns (exit code, parsed report, stderr).
fn cfs(args: &[&str]) -> (i32, Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cfs")).args(args).env_remove("CFS_THREADS").output().unwrap();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap(), report, String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn committed_demos_match_generator() {
    for (rel, v) in demo_files().unwrap() {
        let on_disk = std::fs::read_to_string(demos().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        assert_eq!(on_disk, render(&v), "{rel} is stale; regenerate with `cfs demo --dir demos`");
    }
}

#[test]
fn identity_on_demo_system() {
    let (code, r, _) = cfs(&["verify-identity", "--system", &demo("systems/cfs.json"), "--variation", &demo("variations/unitary.json"), "--omega", "0,2"]);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["status"], "pass");
    let chk = &r["result"]["check"];
    assert!(chk["residual"].as_f64().unwrap() <= 1e-10 * chk["scale"].as_f64().unwrap());
    assert!(chk["lhs"].as_f64().unwrap().abs() > 1e-4);
}

#[test]
fn malformed_input_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"setting\": \"cfs\", \"spin_dim\": ").unwrap();
    let (code, r, err) = cfs(&["el-check", "--system", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(r["error"]["kind"], "schema_error");
    assert!(err.contains("schema_error"));

    let (code, r, _) = cfs(&["el-check", "--system", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(r["status"], "error");
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(cfs(&["verify-identity"]).0, 2);
    assert_eq!(cfs(&["no-such-command"]).0, 2);
    assert_eq!(cfs(&["--help"]).0, 0);
    let (code, r, _) = cfs(&["--tol-abs", "-1", "continuum", "lemma"]);
    assert_eq!(code, 2, "{r}");
}

#[test]
fn region_out_of_range_is_rejected() {
    let (code, r, _) = cfs(&["verify-identity", "--system", &demo("systems/cyclic.json"), "--variation", &demo("variations/unitary5.json"), "--omega", "0,9"]);
    assert_eq!(code, 2, "{r}");
}

#[test]
fn lemma_report_fields() {
    for (file, d) in [("continuum/lemma_d1.json", 1), ("continuum/lemma_d3.json", 3)] {
        let (code, r, _) = cfs(&["continuum", "lemma", "--lemma", &demo(file)]);
        assert_eq!(code, 0, "{r}");
        let res = &r["result"];
        assert_eq!(res["dimension"], d);
        let (lhs, rhs) = (res["lhs"].as_f64().unwrap(), res["rhs"].as_f64().unwrap());
        assert!((lhs - rhs).abs() <= 1e-6 && (res["difference"].as_f64().unwrap() - (lhs - rhs).abs()).abs() < 1e-15);
    }
}

#[test]
fn tightened_tolerance_turns_pass_into_fail() {
    let args = ["continuum", "current", "--model", &demo("continuum/model_explicit.json"), "--packet", &demo("continuum/packet.json")];
    let (code, r, _) = cfs(&args);
    assert_eq!(code, 0, "{r}");
    let rel = r["result"]["packets"][0]["relative_difference"].as_f64().unwrap();
    assert!(rel > 0.0 && rel < 0.02);
    let tight = format!("{:e}", rel / 10.0);
    let mut strict = vec!["--tol-rel", &tight];
    strict.extend_from_slice(&args);
    let (code, r, _) = cfs(&strict);
    assert_eq!(code, 1);
    assert_eq!(r["status"], "fail");
}

#[test]
fn killing_and_volume_demos_pass() {
    let (code, r, _) = cfs(&["verify-killing", "--killing", &demo("killing.json"), "--omega-file", &demo("omega.json")]);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["result"]["verdict"]["status"], "pass");
    let (code, r, _) = cfs(&["volume-check", "--system", &demo("systems/cyclic.json"), "--variation", &demo("variations/cyclic_shift.json"), "--omega", "0,1"]);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["result"]["reduction"]["mapping"][0], serde_json::json!([0, 1]));
}

#[test]
fn inconsistent_model_fails_consistency() {
    let (code, r, _) = cfs(&["continuum", "consistency", "--model", &demo("continuum/model_fixture.json")]);
    assert_eq!(code, 1);
    assert_eq!(r["result"]["pass"], false);
    let (code, _, _) = cfs(&["continuum", "consistency", "--model", &demo("continuum/model_explicit.json")]);
    assert_eq!(code, 0);
}

#[test]
fn solve_writes_report_csv_and_system() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, sys) = (dir.path().join("r.json"), dir.path().join("t.csv"), dir.path().join("s.json"));
    let (code, _, _) = cfs(&[
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "solve",
        "--system",
        &demo("systems/diagonal.json"),
        "--out-system",
        sys.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["seed"], 3);
    assert_eq!(r["result"]["config"]["seed"], 3);
    let trace = std::fs::read_to_string(&csv).unwrap();
    assert!(trace.starts_with("iteration,action\n"));
    // the optimized system is itself a valid input
    let (code, r, _) = cfs(&["el-check", "--system", sys.to_str().unwrap()]);
    assert_eq!(code, 0, "{r}");
}

#[test]
fn source_date_epoch_pins_timestamp() {
    let out = Command::new(env!("CARGO_BIN_EXE_cfs"))
        .args(["continuum", "lemma"])
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap();
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["timestamp"], "1970-01-01T00:00:00Z");
}
