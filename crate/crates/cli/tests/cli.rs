use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hcap(args: &[&str], dir: &Path, workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hcap"));
    cmd.args(args).current_dir(dir).env_remove("HCAP_WORKERS");
    if let Some(w) = workers {
        cmd.env("HCAP_WORKERS", w);
    }
    cmd.output().expect("binary runs")
}

fn write_job(dir: &Path, name: &str, body: &str) -> String {
    std::fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const SLIT_JOB: &str = r#"{
  "version": 1,
  "seed": 2024,
  "job": {"command": "hcap", "hull": {"kind": "vertical_slit", "base": 0.0, "height": 1.0}}
}"#;

#[test]
fn hcap_job_estimates_the_slit() {
    let tmp = tempfile::tempdir().unwrap();
    let job = write_job(tmp.path(), "slit.json", SLIT_JOB);
    let out = hcap(&["run", &job, "--out", "o"], tmp.path(), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&tmp.path().join("o"));
    let est = &s["result"]["hcap"]["estimate"];
    let (mean, se) = (est["mean"].as_f64().unwrap(), est["stderr"].as_f64().unwrap());
    assert!((mean - 0.5).abs() <= 3.0 * se, "{mean} ± {se}");
    assert_eq!(s["seed"], 2024);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["config"]["walk"]["eps_absorb"], 1e-4);
    assert_eq!(s["config_sha256"].as_str().unwrap().len(), 64);
    let nodes = std::fs::read_to_string(tmp.path().join("o/nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count(), 65);
}

#[test]
fn low_eta_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let job = write_job(tmp.path(), "slit.json", SLIT_JOB);
    let out = hcap(&["hcap", &job, "--out", "o", "--set", "eta=0.5"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("for any η > Im F"));
    assert!(!tmp.path().join("o/summary.json").exists(), "no compute after a failed precondition");
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let job = write_job(tmp.path(), "slit.json", SLIT_JOB);
    for (dir, w) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = hcap(&["run", &job, "--out", dir, "--set", "n_per_node=500"], tmp.path(), Some(w));
        assert!(out.status.success());
    }
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "nodes.csv"), read("b", "nodes.csv"));
    assert_eq!(read("a", "nodes.csv"), read("c", "nodes.csv"));
    let strip = |d: &str| {
        let mut s = summary(&tmp.path().join(d));
        s.as_object_mut().unwrap().remove("wall_time_s");
        s
    };
    assert_eq!(strip("a"), strip("c"));
}

#[test]
fn schema_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let job = write_job(tmp.path(), "slit.json", SLIT_JOB);
    let unknown = hcap(&["run", &job, "--out", "o", "--set", "colour=1"], tmp.path(), None);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown field"));

    let no_seed = write_job(
        tmp.path(),
        "noseed.json",
        r#"{"version": 1, "job": {"command": "hcap", "hull": {"kind": "half_disk", "center": 0, "radius": 1}}}"#,
    );
    let out = hcap(&["run", &no_seed, "--out", "o"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let mismatch = hcap(&["validate", &job, "--out", "o"], tmp.path(), None);
    assert_eq!(mismatch.status.code(), Some(1));
    let bad_walk = hcap(&["run", &job, "--out", "o", "--set", "walk.eps_absorb=-1"], tmp.path(), None);
    assert_eq!(bad_walk.status.code(), Some(1));
}

#[test]
fn truncation_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let job = write_job(tmp.path(), "slit.json", SLIT_JOB);
    let out = hcap(
        &["run", &job, "--out", "o", "--set", "walk.max_steps=2", "--set", "n_per_node=100"],
        tmp.path(),
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(&tmp.path().join("o"))["status"], "numerical_failure");
}

#[test]
fn validate_reports_sealed_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let arch = r#"hull={"kind":"union","parts":[{"kind":"vertical_slit","base":-1,"height":1},{"kind":"vertical_slit","base":1,"height":1},{"kind":"segment","a":{"re":-1,"im":1},"b":{"re":1,"im":1}}]}"#;
    let out = hcap(&["validate", "--seed", "1", "--out", "o", "--set", arch], tmp.path(), None);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&tmp.path().join("o"))["result"]["passed"], false);
    let ok = hcap(
        &["validate", "--seed", "1", "--out", "p", "--set", r#"hull={"kind":"half_disk","center":0,"radius":1}"#],
        tmp.path(),
        None,
    );
    assert!(ok.status.success());
}

#[test]
fn harmonic_measure_samples_are_exported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hcap(
        &[
            "hm-sample",
            "--seed",
            "5",
            "--out",
            "o",
            "--set",
            r#"hull={"kind":"vertical_slit","base":0,"height":1}"#,
            "--set",
            r#"z={"re":0,"im":2}"#,
            "--set",
            "n=2000",
        ],
        tmp.path(),
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("o/samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2001);
    assert!(csv.lines().next().unwrap().starts_with("x,y,tag"));
    let s = summary(&tmp.path().join("o"));
    let c = &s["result"]["counts_by_piece"];
    assert_eq!(c["hull"].as_u64().unwrap() + c["real_line"].as_u64().unwrap(), 2000);
}

#[test]
fn hitting_probe_reference_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let job = write_job(
        tmp.path(),
        "hit.json",
        r#"{
  "version": 1,
  "seed": 8,
  "out": "o",
  "job": {
    "command": "probe-hitting",
    "slits": {"slits": [{"y": 1.0, "x_lo": -1.0, "x_hi": 1.0}]},
    "targets": [{"re": 5, "im": 0}, {"re": -5, "im": 0.25}],
    "eps_list": [0.4, 0.01],
    "n": 4000
  }
}"#,
    );
    let out = hcap(&["run", &job], tmp.path(), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&tmp.path().join("o"));
    assert_eq!(s["result"]["monotone"], true);
    let rows = std::fs::read_to_string(tmp.path().join("o/hitting_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn monotone_experiment_fills_the_pocket() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hcap(&["experiment", "monotone", "--family", "g", "--seed", "1", "--out", "o"], tmp.path(), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&tmp.path().join("o"));
    assert!(s["result"]["filled_cells"].as_u64().unwrap() > 10_000);
    assert_eq!(s["result"]["kernel_certificate"]["passed"], true);

    let bad = hcap(&["experiment", "monotone", "--family", "e", "--seed", "1", "--out", "p"], tmp.path(), None);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn counterexample_experiment_flags_the_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hcap(
        &["experiment", "counterexample", "--seed", "9", "--out", "o", "--set", "budgets.n_per_node=1000"],
        tmp.path(),
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&tmp.path().join("o"));
    assert_eq!(s["result"]["satisfies_hypotheses"], false);
    assert_eq!(s["result"]["envelope_growth"]["at_least_linear"], true);
    assert!(s["result"]["verdict"].as_str().unwrap().contains("hypotheses not satisfied"));
    let csv = std::fs::read_to_string(tmp.path().join("o/capacities.csv")).unwrap();
    assert!(csv.starts_with("n,estimate,stderr,oracle"));
}

#[test]
fn kernel_certificate_rejects_a_wrong_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hcap(
        &[
            "experiment",
            "monotone",
            "--family",
            "a",
            "--seed",
            "1",
            "--out",
            "o",
            "--set",
            r#"claimed_limit={"kind":"vertical_slit","base":0,"height":0.5}"#,
        ],
        tmp.path(),
        None,
    );
    assert!(out.status.success());
    let s = summary(&tmp.path().join("o"));
    assert_eq!(s["result"]["kernel_certificate"]["passed"], false);
}
