//! End-to-end behavior of the `kms` binary: exit codes, output shapes, and
//! agreement with the library entry points.

use std::path::Path;
use std::process::Command;

use kms_core::experiments::invariance_demo;

fn kms() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kms"));
    cmd.env("KMS_LOG", "error");
    cmd
}

fn make_inputs(dir: &Path) {
    let out = kms()
        .current_dir(dir)
        .args([
            "generate",
            "--k",
            "2",
            "--d",
            "2",
            "--points-per-cluster",
            "30",
            "--std",
            "0.1",
            "--seed",
            "3",
            "--out",
            "data.csv",
            "--centers-out",
            "centers.csv",
        ])
        .output()
        .expect("spawn kms");
    assert!(out.status.success());
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = kms().arg("frobnicate").output().expect("spawn kms");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_parameter_exits_2_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    make_inputs(tmp.path());
    let out = kms()
        .current_dir(tmp.path())
        .args([
            "minibatch",
            "--data",
            "data.csv",
            "--centers",
            "centers.csv",
            "--b",
            "0",
            "--seed",
            "1",
        ])
        .output()
        .expect("spawn kms");
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty(), "expected a diagnostic message");

    let out = kms()
        .current_dir(tmp.path())
        .args([
            "dlt",
            "--data",
            "data.csv",
            "--centers",
            "centers.csv",
            "--a",
            "4",
            "--b",
            "4",
            "--scheme",
            "not-a-scheme",
            "--seed",
            "1",
        ])
        .output()
        .expect("spawn kms");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_failure_exits_1() {
    let out = kms()
        .args([
            "diagnostics",
            "--data",
            "/nonexistent/data.csv",
            "--centers",
            "/nonexistent/c.csv",
        ])
        .output()
        .expect("spawn kms");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_csv_exits_1_and_names_row() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.csv"), "1,2\n3\n").unwrap();
    std::fs::write(tmp.path().join("c.csv"), "0,0\n").unwrap();
    let out = kms()
        .current_dir(tmp.path())
        .args(["diagnostics", "--data", "bad.csv", "--centers", "c.csv"])
        .output()
        .expect("spawn kms");
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 2"), "stderr was: {stderr}");
}

#[test]
fn diagnostics_prints_flat_json() {
    let tmp = tempfile::tempdir().unwrap();
    make_inputs(tmp.path());
    let out = kms()
        .current_dir(tmp.path())
        .args([
            "diagnostics",
            "--data",
            "data.csv",
            "--centers",
            "centers.csv",
        ])
        .output()
        .expect("spawn kms");
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    for key in [
        "phi",
        "phi_j",
        "k_C",
        "eta",
        "eta_bar",
        "eta_hat",
        "cost",
        "per_cluster_cost",
    ] {
        assert!(v.get(key).is_some(), "missing key {key}");
    }
}

#[test]
fn invariance_csv_matches_library_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kms()
        .current_dir(tmp.path())
        .args([
            "invariance",
            "--alpha",
            "100",
            "--n",
            "200",
            "--b",
            "8,32",
            "--trials",
            "300",
            "--seed",
            "7",
            "--out",
            "inv.csv",
        ])
        .output()
        .expect("spawn kms");
    assert!(out.status.success());
    let cli_csv = std::fs::read(tmp.path().join("inv.csv")).unwrap();

    let result = invariance_demo(100.0, 200, 1.0, &[8, 32], 300, 7).unwrap();
    let mut lib_csv = Vec::new();
    result.to_csv(&mut lib_csv).unwrap();
    assert_eq!(cli_csv, lib_csv, "CLI output must match the library run");
}

#[test]
fn quantum_noiseless_equals_lloyd_via_cli() {
    let tmp = tempfile::tempdir().unwrap();
    make_inputs(tmp.path());
    let lloyd = kms()
        .current_dir(tmp.path())
        .args([
            "lloyd",
            "--data",
            "data.csv",
            "--centers",
            "centers.csv",
            "--out",
            "lloyd.csv",
        ])
        .output()
        .expect("spawn kms");
    assert!(lloyd.status.success());
    let quantum = kms()
        .current_dir(tmp.path())
        .args([
            "quantum-sim",
            "--data",
            "data.csv",
            "--centers",
            "centers.csv",
            "--eps",
            "0.1",
            "--delta",
            "0.2",
            "--seed",
            "1",
            "--noiseless",
            "--out",
            "quantum.csv",
        ])
        .output()
        .expect("spawn kms");
    assert!(quantum.status.success());
    let a = std::fs::read(tmp.path().join("lloyd.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("quantum.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn minibatch_rerun_writes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    make_inputs(tmp.path());
    let args = [
        "minibatch",
        "--data",
        "data.csv",
        "--centers",
        "centers.csv",
        "--b",
        "256",
        "--seed",
        "1",
        "--out",
        "out.csv",
    ];
    let run = || {
        let out = kms()
            .current_dir(tmp.path())
            .args(args)
            .output()
            .expect("spawn kms");
        assert!(out.status.success());
        std::fs::read(tmp.path().join("out.csv")).unwrap()
    };
    assert_eq!(run(), run());
}
