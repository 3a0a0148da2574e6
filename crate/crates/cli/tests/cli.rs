//! End-to-end checks of the `effx` binary: report shape, flag/config
//! precedence, error envelopes, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn effx() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_effx"));
    cmd.env_remove("EFFX_THREADS");
    cmd
}

fn write_fixture(dir: &Path) -> std::path::PathBuf {
    let csv = dir.join("data.csv");
    let mut body = String::from("user_id,treatment,segment,spend\n");
    for (i, (arm, seg, y)) in [
        ("control", "low", 10.0),
        ("control", "low", 11.0),
        ("control", "high", 20.0),
        ("control", "high", 21.0),
        ("trt", "low", 14.0),
        ("trt", "low", 15.0),
        ("trt", "high", 26.0),
        ("trt", "high", 27.0),
    ]
    .iter()
    .enumerate()
    {
        body.push_str(&format!("u{:02},{arm},{seg},{y}\n", i + 1));
    }
    fs::write(&csv, body).unwrap();
    let config = dir.join("run.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "input": {:?},
  "schema": [
    {{"name": "user_id", "kind": "unit_id"}},
    {{"name": "treatment", "kind": "treatment"}},
    {{"name": "segment", "kind": "categorical"}},
    {{"name": "spend", "kind": "kpi"}}
  ],
  "design": {{
    "treatment": "treatment",
    "covariates": ["segment"],
    "interact_treatment_covariates": true
  }}
}}"#,
            csv.display()
        ),
    )
    .unwrap();
    config
}

fn parse_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn parse_stderr(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error")
}

#[test]
fn fit_reports_terms_and_exact_cell_mean_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = effx()
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let report = parse_stdout(&out);
    let results = &report["results"];
    assert_eq!(
        results["terms"],
        serde_json::json!([
            "intercept",
            "treatment[trt]",
            "segment[low]",
            "treatment[trt]×segment[low]"
        ])
    );
    let beta: Vec<f64> = results["estimates"][0]["beta"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, want) in beta.iter().zip([20.5, 6.0, -10.0, -2.0]) {
        assert!((got - want).abs() < 1e-9, "beta {got} vs {want}");
    }
    assert_eq!(results["n_rows"], 8);
    assert!(report["telemetry"]["elapsed_ms"].get("fit").is_some());
}

#[test]
fn the_output_flag_writes_the_same_report_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let path = dir.path().join("report.json");
    let out = effx()
        .args(["fit", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&path)
        .output()
        .unwrap();
    let printed = parse_stdout(&out);
    let written: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(printed["results"], written["results"]);
}

#[test]
fn covariance_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = effx()
        .args(["fit", "--covariance", "hc1", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let report = parse_stdout(&out);
    assert_eq!(report["results"]["covariance"], "hc1");
}

#[test]
fn the_thread_environment_variable_sets_the_default_pool() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = effx()
        .env("EFFX_THREADS", "2")
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["telemetry"]["threads"], 2);

    let out = effx()
        .env("EFFX_THREADS", "2")
        .args(["fit", "--threads", "3", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["telemetry"]["threads"], 3,
        "the flag wins over the env var"
    );
}

#[test]
fn unknown_config_keys_are_rejected_with_the_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"inptu": "x.csv"}"#).unwrap();
    let out = effx()
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = parse_stderr(&out);
    assert_eq!(err["code"], "invalid_request");
    assert_eq!(err["context"]["class"], "config");
}

#[test]
fn bad_flags_produce_a_usage_error_in_json() {
    let out = effx().args(["fit", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = parse_stderr(&out);
    assert_eq!(err["code"], "usage");
    assert_eq!(err["context"]["class"], "config");
}

#[test]
fn a_missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = effx()
        .args(["fit", "--input", "/nonexistent/rows.csv", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = parse_stderr(&out);
    assert_eq!(err["code"], "io");
    assert_eq!(err["context"]["path"], "/nonexistent/rows.csv");
}

#[test]
fn collinear_columns_exit_with_the_numeric_code_and_name_the_terms() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dup.csv");
    fs::write(
        &csv,
        "treatment,x,x_copy,y\n\
         a,1.0,1.0,2.0\n\
         a,2.0,2.0,3.0\n\
         b,1.5,1.5,4.0\n\
         b,2.5,2.5,6.0\n\
         a,0.5,0.5,1.5\n\
         b,0.5,0.5,3.0\n",
    )
    .unwrap();
    let config = dir.path().join("dup.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "input": {:?},
  "schema": [
    {{"name": "treatment", "kind": "treatment"}},
    {{"name": "x", "kind": "numeric"}},
    {{"name": "x_copy", "kind": "numeric"}},
    {{"name": "y", "kind": "kpi"}}
  ],
  "design": {{"treatment": "treatment", "covariates": ["x", "x_copy"]}}
}}"#,
            csv.display()
        ),
    )
    .unwrap();
    let out = effx()
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = parse_stderr(&out);
    assert_eq!(err["code"], "rank_deficient");
    assert_eq!(err["context"]["class"], "numeric");
    let columns = err["context"]["columns"].as_array().unwrap();
    assert!(
        columns.iter().any(|c| c == "x_copy"),
        "offending column named in context: {columns:?}"
    );
}

#[test]
fn malformed_cells_report_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "treatment,y\na,1.0\nb,oops\n").unwrap();
    let config = dir.path().join("bad.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "input": {:?},
  "schema": [
    {{"name": "treatment", "kind": "treatment"}},
    {{"name": "y", "kind": "kpi"}}
  ],
  "design": {{"treatment": "treatment"}}
}}"#,
            csv.display()
        ),
    )
    .unwrap();
    let out = effx()
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = parse_stderr(&out);
    assert_eq!(err["code"], "unparseable_value");
    assert_eq!(err["context"]["row"], 2);
    assert_eq!(err["context"]["column"], "y");
}

#[test]
fn compress_writes_an_artifact_the_library_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let artifact = dir.path().join("stats.bin");
    let out = effx()
        .args(["compress", "--config"])
        .arg(&config)
        .arg("--artifact")
        .arg(&artifact)
        .output()
        .unwrap();
    let report = parse_stdout(&out);
    assert_eq!(report["results"]["n_groups"], 4);
    assert_eq!(report["results"]["ratio"], 2.0);
    let bytes = fs::read(&artifact).unwrap();
    assert_eq!(report["results"]["artifact"]["bytes"], bytes.len() as u64);
    let restored =
        effx_core::compress::CompressedDataset::read_from(&mut bytes.as_slice(), "stats.bin")
            .unwrap();
    assert_eq!(restored.n_total(), 8);
    assert_eq!(restored.n_groups(), 4);
}

#[test]
fn policy_eval_dumps_assignments_that_match_the_reported_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let assignments = dir.path().join("assign.csv");
    let out = effx()
        .args([
            "policy-eval",
            "--policy",
            "greedy",
            "--baseline",
            "control",
            "--config",
        ])
        .arg(&config)
        .arg("--assignments")
        .arg(&assignments)
        .output()
        .unwrap();
    let report = parse_stdout(&out);
    assert_eq!(report["results"]["assignment_counts"]["trt"], 8);
    let statistic = report["results"]["eval"]["statistic"].as_f64().unwrap();
    assert!((statistic - 40.0).abs() < 1e-9, "uplift {statistic}");
    assert_eq!(report["results"]["eval"]["n_users"], 8);

    let body = fs::read_to_string(&assignments).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("unit_id,action"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.ends_with(",trt")));
    assert!(rows[0].starts_with("u01,"));
}

#[test]
fn a_policy_evaluated_against_itself_is_null() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let out = effx()
        .args([
            "policy-eval",
            "--policy",
            "control",
            "--baseline",
            "control",
            "--config",
        ])
        .arg(&config)
        .output()
        .unwrap();
    let report = parse_stdout(&out);
    let eval = &report["results"]["eval"];
    assert_eq!(eval["statistic"].as_f64().unwrap(), 0.0);
    assert_eq!(eval["se"].as_f64().unwrap(), 0.0);
    assert_eq!(eval["p_one_sided"].as_f64().unwrap(), 0.5);
}

#[test]
fn blb_seeds_reproduce_and_differ_across_values() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("wide.csv");
    let mut body = String::from("treatment,y\n");
    let mut state = 0x2545F4914F6CDD1Du64;
    for i in 0..600 {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let noise = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        let arm = if i % 2 == 0 { "a" } else { "b" };
        let y = if arm == "b" { 1.0 } else { 0.0 } + noise;
        body.push_str(&format!("{arm},{y:.6}\n"));
    }
    fs::write(&csv, body).unwrap();
    let config = dir.path().join("wide.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "input": {:?},
  "schema": [
    {{"name": "treatment", "kind": "treatment"}},
    {{"name": "y", "kind": "kpi"}}
  ],
  "design": {{"treatment": "treatment"}}
}}"#,
            csv.display()
        ),
    )
    .unwrap();
    let run = |seed: &str| {
        let out = effx()
            .args([
                "blb",
                "--gamma",
                "0.7",
                "--resamples",
                "40",
                "--seed",
                seed,
                "--config",
            ])
            .arg(&config)
            .output()
            .unwrap();
        parse_stdout(&out)["results"].clone()
    };
    let first = run("11");
    let again = run("11");
    let other = run("12");
    assert_eq!(first, again, "same seed, same distribution estimate");
    assert_ne!(
        first["estimates"][0]["se"], other["estimates"][0]["se"],
        "different seeds resample differently"
    );
}

#[test]
fn results_blocks_do_not_depend_on_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path());
    let results = |threads: &str| {
        let out = effx()
            .args([
                "effects",
                "--segments",
                "segment",
                "--threads",
                threads,
                "--config",
            ])
            .arg(&config)
            .output()
            .unwrap();
        serde_json::to_string(&parse_stdout(&out)["results"]).unwrap()
    };
    assert_eq!(results("1"), results("4"));
}
