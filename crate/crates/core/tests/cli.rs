//! End-to-end runs of the `metapac` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn metapac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metapac"))
        .args(args)
        .env_remove("METAPAC_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tasks")
}

fn write_tasks(dir: &Path, tasks: &[&[f64]]) {
    for (i, scores) in tasks.iter().enumerate() {
        let d = dir.join(format!("t{i}"));
        fs::create_dir_all(&d).unwrap();
        let body: String = scores.iter().map(|s| format!("{s}\n")).collect();
        fs::write(d.join("calib.csv"), format!("score\n{body}")).unwrap();
    }
}

// scipy grid search over the same files
const FIXTURE_THRESHOLD: f64 = 0.026664;
const FIXTURE_PER_TASK: [f64; 30] = [
    0.037907, 0.076112, 0.048953, 0.039447, 0.048439, 0.064425, 0.052682, 0.047055, 0.049582, 0.102302,
    0.052254, 0.063004, 0.105512, 0.034233, 0.031681, 0.059362, 0.092962, 0.056285, 0.060877, 0.0425,
    0.026664, 0.032247, 0.042987, 0.064341, 0.064606, 0.057446, 0.035253, 0.058498, 0.037381, 0.039389,
];

#[test]
fn calibrate_fixture_golden() {
    let dir = fixture();
    let o = metapac(&["calibrate", "--tasks", dir.to_str().unwrap(), "--eps", "0.1", "--alpha", "0.2", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["threshold"].as_f64().unwrap(), FIXTURE_THRESHOLD);
    let per: Vec<f64> = v["per_task_thresholds"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(per, FIXTURE_PER_TASK);
    assert_eq!(v["tasks"][0], "task_00");
    assert_eq!(v["tasks"][29], "task_29");
}

#[test]
fn calibrate_extremes_serialize() {
    let tmp = tempfile::tempdir().unwrap();
    write_tasks(tmp.path(), &[&[0.3, 0.5, 0.2, 0.9]]);
    let p = tmp.path().to_str().unwrap();
    // with one task the second level admits +∞ only when 1 - δ <= α/2
    let o = metapac(&["calibrate", "--tasks", p, "--eps", "1", "--alpha", "0.9", "--delta", "0.6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["threshold"], "inf");
    assert_eq!(v["per_task_thresholds"], serde_json::json!(["inf"]));

    let o = metapac(&["calibrate", "--tasks", p, "--eps", "1", "--alpha", "0.1", "--delta", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim_end(), r#"{"threshold":0.0,"per_task_thresholds":["inf"],"tasks":["t0"]}"#);
}

#[test]
fn calibrate_malformed_csv_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("bad");
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join("calib.csv"), "score\n0.5\nabc\n").unwrap();
    let o = metapac(&["calibrate", "--tasks", tmp.path().to_str().unwrap(), "--eps", "0.1", "--alpha", "0.2", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("calib.csv") && e.contains(":3"), "{e}");

    let missing = tmp.path().join("nothing");
    fs::create_dir_all(missing.join("t")).unwrap();
    let o = metapac(&["calibrate", "--tasks", missing.to_str().unwrap(), "--eps", "0.1", "--alpha", "0.2", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_rejects_bad_levels() {
    let o = metapac(&["calibrate", "--tasks", fixture().to_str().unwrap(), "--eps", "1.5", "--alpha", "0.2", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(metapac(&["frobnicate"]).status.code(), Some(1));
}

const SMALL: [&str; 12] = ["-N", "20", "-n", "200", "-t", "5", "-O", "3", "-I", "4", "-E", "50"];

fn simulate(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    metapac(&args)
}

#[test]
fn simulate_writes_parseable_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = simulate(tmp.path(), &["--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 3);

    let mut inner = csv::Reader::from_path(tmp.path().join("inner.csv")).unwrap();
    assert_eq!(inner.records().count(), 3 * 3 * 4);
    let mut summary = csv::Reader::from_path(tmp.path().join("summary.csv")).unwrap();
    let header = summary.headers().unwrap().clone();
    assert_eq!(&header[0], "method");
    assert_eq!(&header[1], "outer_success_fraction");
    assert_eq!(summary.records().count(), 3);
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path(), &["--seed", "9"]);
    simulate(b.path(), &["--seed", "9"]);
    for f in ["report.json", "inner.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn env_seed_fills_only_a_gap() {
    let run = |seed_flag: Option<&str>, env: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let mut args = vec!["simulate".to_string(), "--out".into(), tmp.path().to_str().unwrap().into()];
        args.extend(SMALL.iter().map(|s| s.to_string()));
        if let Some(s) = seed_flag {
            args.extend(["--seed".to_string(), s.to_string()]);
        }
        let o = Command::new(env!("CARGO_BIN_EXE_metapac")).args(&args).env("METAPAC_SEED", env).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
        v["config"]["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, "31"), 31);
    assert_eq!(run(Some("4"), "31"), 4);
}

#[test]
fn flags_are_echoed_in_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"eps": 0.2, "alpha": 0.3, "seed": 1, "methods": ["pooled_ps"], "meta": {"sigma_task": 0.7}}"#).unwrap();
    let out = tmp.path().join("out");
    let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--eps", "0.15", "--methods", "meta_ps,fixed:0"];
    args.extend(SMALL);
    let o = metapac(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let c = &v["config"];
    assert_eq!(c["spec"]["eps"], 0.15);
    assert_eq!(c["spec"]["alpha"], 0.3);
    assert_eq!(c["spec"]["num_tasks"], 20);
    assert_eq!(c["seed"], 1);
    assert_eq!(c["methods"], serde_json::json!(["meta_ps", "fixed:0"]));
    assert_eq!(c["meta"]["sigma_task"], 0.7);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"epsilon": 0.2}"#).unwrap();
    let o = metapac(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epsilon"), "{}", stderr(&o));
}

#[test]
fn verify_exit_codes() {
    let mut args = vec!["verify"];
    args.extend(SMALL);
    let pass = metapac(&[&args[..], &["--methods", "fixed:0"]].concat());
    assert_eq!(pass.status.code(), Some(0), "{}", stderr(&pass));
    let text = stdout(&pass);
    assert!(text.contains("outer_success_fraction=1") && text.trim_end().ends_with("PASS"), "{text}");

    let fail = metapac(&[&args[..], &["--methods", "fixed:inf"]].concat());
    assert_eq!(fail.status.code(), Some(3));
    assert!(stdout(&fail).trim_end().ends_with("FAIL"));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"meta": {"family": "classification"}}"#).unwrap();
    let o = metapac(&[&args[..], &["--config", cfg.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_matches_summary_csv() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &["--seed", "2"]);
    let o = metapac(&["report", tmp.path().join("report.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let table: Vec<Vec<String>> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    let csv_text = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv_text
        .lines()
        .map(|l| l.split(',').map(|c| if c.is_empty() { "-".into() } else { c.to_string() }).collect())
        .collect();
    assert_eq!(table, rows);
}

#[test]
fn report_empty_and_corrupt() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut args = vec!["simulate", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    assert_eq!(metapac(&args).status.code(), Some(0));
    let mut v: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    v["methods"] = serde_json::json!([]);
    let empty = tmp.path().join("empty.json");
    fs::write(&empty, v.to_string()).unwrap();
    let o = metapac(&["report", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("method"));

    let corrupt = tmp.path().join("corrupt.json");
    fs::write(&corrupt, "{\"config\": ").unwrap();
    let o = metapac(&["report", corrupt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("corrupt.json"));
}

#[test]
fn report_golden_rendering() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/report.json");
    let o = metapac(&["report", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let want = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/report.txt")).unwrap();
    assert_eq!(stdout(&o), want);
}
