use std::ffi::{OsStr, OsString};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn semprune<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_semprune")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Writes a synthetic dataset into `<tmp>/data` and returns its directory.
fn synth(tmp: &TempDir, spec: &str) -> PathBuf {
    let spec_path = tmp.path().join("spec.json");
    std::fs::write(&spec_path, spec).unwrap();
    let data = tmp.path().join("data");
    let run = semprune([OsStr::new("synth"), "--spec".as_ref(), spec_path.as_ref(), "--out".as_ref(), data.as_ref()]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    data
}

fn with(cmd: &str, data: &Path, out: &Path, extra: &[&str]) -> Run {
    let mut args: Vec<OsString> = vec![cmd.into(), "--emb".into(), data.join("embeddings.emb").into()];
    args.extend(["--items".into(), data.join("items.jsonl").into(), "--out".into(), out.into()]);
    args.extend(extra.iter().map(OsString::from));
    semprune(args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const PAIRS: &str = r#"{"clusters": 4, "points_per_cluster": 50, "duplicate_groups": 100,
    "duplicate_size": 2, "noise_sigma": 0.003, "dim": 64, "seed": 3}"#;

#[test]
fn prune_keeps_everything_at_eta_one() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, r#"{"clusters": 3, "points_per_cluster": 10, "dim": 16, "outlier_count": 2}"#);
    let out = tmp.path().join("run");
    let run = with("prune", &data, &out, &["--epsilon", "2.0", "--eta", "1.0"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.json()["retention_ratio"], 1.0);
    let keep = std::fs::read_to_string(out.join("keep_list.txt")).unwrap();
    assert_eq!(keep.lines().count(), 32);
    for f in ["prune_manifest.json", "clusters.json", "centroids.emb", "resolved_config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn prune_leaves_one_survivor_per_planted_group() {
    let tmp = TempDir::new().unwrap();
    let data = synth(
        &tmp,
        r#"{"clusters": 4, "points_per_cluster": 25, "duplicate_groups": 10,
            "duplicate_size": 3, "noise_sigma": 0.05, "dim": 96, "seed": 8}"#,
    );
    let out = tmp.path().join("run");
    let run = with("prune", &data, &out, &["--epsilon", "2.0", "--eta", "0.95", "--k", "4"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.json()["retention_ratio"].as_f64().unwrap() < 1.0);

    let truth = read_json(&data.join("ground_truth.json"));
    let keep = std::fs::read_to_string(out.join("keep_list.txt")).unwrap();
    let kept: std::collections::HashSet<&str> = keep.lines().collect();
    for group in truth["duplicate_group_ids"].as_array().unwrap() {
        let survivors = group
            .as_array()
            .unwrap()
            .iter()
            .filter(|id| kept.contains(id.as_str().unwrap()))
            .count();
        assert_eq!(survivors, 1, "{group}");
    }
}

#[test]
fn missing_input_fails_at_load() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope");
    let run = with("prune", &missing, &tmp.path().join("run"), &["--eta", "0.9"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("stage=load"), "{}", run.stderr);
}

#[test]
fn sweep_to_full_retention_prints_eta_one() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, PAIRS);
    let run = with("sweep", &data, &tmp.path().join("run"), &["--epsilon", "2.0", "--target-ratio", "1.0"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.json()["eta"], 1.0);
    assert_eq!(run.json()["achieved"], 1.0);
}

#[test]
fn sweep_halves_planted_pairs() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, PAIRS);
    let out = tmp.path().join("run");
    let run = with(
        "sweep",
        &data,
        &out,
        &["--epsilon", "2.0", "--target-ratio", "0.5", "--tol", "0.02", "--k", "4"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let summary = run.json();
    let achieved = summary["achieved"].as_f64().unwrap();
    assert!((0.48..=0.52).contains(&achieved), "{summary}");
    assert_eq!(summary["status"], "converged");
    let manifest = read_json(&out.join("prune_manifest.json"));
    assert_eq!(manifest["config"]["eta"], summary["eta"]);
}

#[test]
fn unreachable_sweep_exits_three_with_floor() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, r#"{"clusters": 2, "points_per_cluster": 5, "dim": 8}"#);
    let run = with("sweep", &data, &tmp.path().join("run"), &["--target-ratio", "0.0001"]);
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(run.stderr.contains("floor"), "{}", run.stderr);
    let floor = run.json()["floor"].as_f64().unwrap();
    assert!(floor >= 0.1);
}

#[test]
fn random_baseline_command() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, r#"{"clusters": 4, "points_per_cluster": 25, "dim": 8}"#);
    let run = with("random", &data, &tmp.path().join("run"), &["--ratio", "0.2", "--seed", "5"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.json()["retained"], 20);
}

#[test]
fn score_budget_and_savings_reports() {
    let run = semprune(["score", "--miou", "0.7970", "--ratio", "1.0"]);
    assert_eq!(run.code, 0);
    let nd = run.json()["normdel_percent"].as_f64().unwrap();
    assert!((nd - 57.28).abs() <= 0.02, "{nd}");

    let run = semprune(["budget", "--base-epochs", "200", "--ratio", "1/20"]);
    assert_eq!(run.code, 0);
    assert_eq!(run.json()["epochs"], 4000);

    let run = semprune(["savings", "--frames", "22546800000", "--fps", "325.6", "--retained", "0.02"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let saved = run.json()["gpu_hours_saved"].as_f64().unwrap();
    assert!((saved - 18_849.0).abs() < 5.0, "{saved}");

    let run = semprune(["score", "--miou", "1.5", "--ratio", "1.0"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("stage=score"));
    let run = semprune(["budget", "--ratio", "0"]);
    assert_eq!(run.code, 2);
}

#[test]
fn synth_is_deterministic() {
    let spec = r#"{"clusters": 3, "points_per_cluster": 6, "duplicate_groups": 2, "duplicate_size": 3, "dim": 12, "seed": 7}"#;
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (da, db) = (synth(&a, spec), synth(&b, spec));
    for f in ["embeddings.emb", "items.jsonl", "ground_truth.json"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
    let truth = read_json(&da.join("ground_truth.json"));
    let groups = truth["duplicate_group_ids"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert!(groups.iter().all(|g| g.as_array().unwrap().len() == 3));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, PAIRS);
    let first = tmp.path().join("first");
    let run = with("prune", &data, &first, &["--eta", "0.99"]);
    assert_eq!(run.code, 0, "{}", run.stderr);

    let resolved = read_json(&first.join("resolved_config.json"));
    let cfg = &resolved["config"];
    assert_eq!(cfg["kmeans"]["seed"], 0);
    let second = tmp.path().join("second");
    let s = |v: &Value| v.to_string().trim_matches('"').to_string();
    let args = [
        "--epsilon".to_string(),
        s(&cfg["epsilon"]),
        "--eta".into(),
        s(&cfg["eta"]),
        "--max-iterations".into(),
        s(&cfg["max_iterations"]),
        "--k".into(),
        s(&cfg["kmeans"]["k"]),
        "--seed".into(),
        s(&cfg["kmeans"]["seed"]),
        "--kmeans-max-iters".into(),
        s(&cfg["kmeans"]["max_iters"]),
        "--rel-tol".into(),
        s(&cfg["kmeans"]["rel_tol"]),
    ];
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let run = with("prune", &data, &second, &args);
    assert_eq!(run.code, 0, "{}", run.stderr);
    for f in ["prune_manifest.json", "keep_list.txt", "clusters.json", "centroids.emb"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(semprune(["prune"]).code, 2);
    assert_eq!(semprune(["frobnicate"]).code, 2);
    assert_eq!(semprune(["--help"]).code, 0);
}
