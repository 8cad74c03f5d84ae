use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn msm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msm"))
        .args(args)
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("msm-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

#[test]
fn version_is_json() {
    let out = msm(&["--version"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["name"], "msm");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn help_lists_every_subcommand() {
    let out = msm(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in msm_core::analysis::AnalysisKind::ALL
        .iter()
        .map(|k| k.name())
    {
        assert!(text.contains(name), "help misses {name}");
    }
}

#[test]
fn km_output_shape() {
    let out = msm(&[
        "km",
        "--input",
        &fixture("aml.csv"),
        "--time",
        "time1",
        "--group-by",
        "x",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["analysis"], "km");
    assert_eq!(v["params"]["conf_level"], 0.95);
    assert_eq!(v["result"]["curves"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_input_exits_2() {
    let out = msm(&["km", "--input", "/nonexistent/file.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "Usage");
}

#[test]
fn validation_errors_exit_2() {
    let out = msm(&[
        "km",
        "--input",
        &fixture("veteran.csv"),
        "--group-by",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "UnknownGroupColumn");
    assert!(e["message"].as_str().unwrap().contains("nope"));

    let out = msm(&[
        "cox",
        "--input",
        &fixture("veteran.csv"),
        "--covariates",
        "karno",
        "--params",
        "[1]",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_2() {
    let out = msm(&["km", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn computation_errors_exit_3() {
    let path = scratch("single.csv");
    std::fs::write(&path, "time,status,g\n1,1,a\n2,0,a\n3,1,a\n").unwrap();
    let out = msm(&[
        "ranktest",
        "--input",
        path.to_str().unwrap(),
        "--group",
        "g",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "SingleGroup");
}

#[test]
fn plot_data_written() {
    let path = scratch("curves.csv");
    let out = msm(&[
        "transprob",
        "--input",
        &fixture("colonIDM.csv"),
        "--grid",
        "365,730",
        "--n-boot",
        "0",
        "--emit-plot-data",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,s,from,to,t,est,lower,upper"));
    // transient rows only: 3 + 2 curves, two grid points each
    assert_eq!(lines.count(), 10);
}

#[test]
fn plot_data_rejected_for_tables() {
    let out = msm(&[
        "cox",
        "--input",
        &fixture("veteran.csv"),
        "--covariates",
        "karno",
        "--emit-plot-data",
        "x.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_is_reproducible() {
    let args = [
        "cif",
        "--input",
        &fixture("colonIDM.csv"),
        "--grid",
        "730",
        "--n-boot",
        "30",
        "--seed",
        "11",
    ];
    let a = msm(&args);
    let b = msm(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["params"]["seed"], 11);
}

#[test]
fn params_flag_merges_under_flags() {
    let out = msm(&[
        "km",
        "--input",
        &fixture("veteran.csv"),
        "--params",
        r#"{"conf_level": 0.9, "group_by": "trt"}"#,
        "--group-by",
        "celltype",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["params"]["conf_level"], 0.9);
    assert_eq!(v["params"]["group_by"], "celltype");
}

#[test]
fn inline_msm_mapping() {
    let mapping = r#"{"kind":"msm","system":{"n_states":2,"edges":[[1,2]]},
        "states":[{"time":"time","status":"status"}]}"#;
    let out = msm(&[
        "counts",
        "--input",
        &fixture("veteran.csv"),
        "--mapping",
        mapping,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["result"]["transitions"].as_array().unwrap().len(), 1);
}
