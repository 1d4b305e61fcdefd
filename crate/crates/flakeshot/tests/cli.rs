mod common;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Stdio;

use chrono::{TimeZone, Utc};
use common::*;
use flakeshot::overlay::write_overlay;
use flakeshot::store::ProjectStore;
use flakeshot_core::labeler::OverlayRow;
use flakeshot_core::synth::SynthConfig;
use flakeshot_core::{JobRecord, JobStatus};
use serde_json::Value;

const SMALL: &str = r#"
[mccv]
repeats = 3
trials = 1
shots = 4

[baseline]
k_grid = [50]
max_depth_grid = [3]
n_estimators_grid = [20]
learning_rate_grid = [0.1]
cv_folds = 3
"#;

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `root` with its bytes.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let (code, err) = failure(&run(&["frobnicate"]));
    assert_eq!(code, 1);
    assert_eq!(err["error"], "usage");
}

#[test]
fn help_succeeds() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("mccv"));
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.jsonl");
    synthetic_samples(&samples, &SynthConfig { failures: 40, ..SynthConfig::default() });
    for args in [
        vec!["mccv", "--samples", p(&samples)],
        vec!["sweep", "--samples", p(&samples)],
        vec!["sample", "--samples", p(&samples), "--size", "5"],
        vec!["train", "--samples", p(&samples), "--out", "unused"],
    ] {
        let (code, err) = failure(&run(&args));
        assert_eq!(code, 1, "{args:?}");
        assert!(err["message"].as_str().unwrap().contains("--seed"), "{err}");
    }
    let o = run(&["sample", "--samples", p(&samples), "--size", "5", "--nondeterministic", "--json"]);
    validate("sample", &json(&o));
}

#[test]
fn data_and_environment_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.jsonl");
    synthetic_samples(&samples, &SynthConfig { failures: 40, ..SynthConfig::default() });

    let (code, _) = failure(&run(&["predict", "--bundle", p(&dir.path().join("none")), "--log", p(&samples)]));
    assert_eq!(code, 2);
    let (code, _) = failure(&run(&["mccv", "--seed", "1", "--samples", p(&dir.path().join("none.jsonl"))]));
    assert_eq!(code, 2);
    // weights that are not there, whether or not the feature is compiled in
    let out = dir.path().join("b");
    let (code, err) = failure(&run(&["train", "--seed", "1", "--samples", p(&samples), "--provider", "pretrained:/no/such/model", "--out", p(&out)]));
    assert_eq!(code, 3, "{err}");
    let (code, _) = failure(&run(&["train", "--seed", "1", "--samples", p(&samples), "--provider", "bert", "--out", p(&out)]));
    assert_eq!(code, 1);
    let (code, _) = failure(&run(&["report"]));
    assert_eq!(code, 1);
    let (code, _) = failure(&run(&["mccv", "--seed", "1", "--repeats", "0", "--samples", p(&samples)]));
    assert_eq!(code, 1);
}

fn ten_failures_two_brown(root: &Path) -> ProjectStore {
    let store = ProjectStore::create(root).unwrap();
    let at = |id: u64| Utc.timestamp_opt(1_700_000_000 + id as i64 * 60, 0).unwrap();
    let mut jobs = Vec::new();
    for i in 0..10u64 {
        let id = 100 + i * 2;
        let rel = store.write_log(id, &format!("step {i}\nERROR: Job failed: exit code 1\n")).unwrap();
        jobs.push(JobRecord {
            project_id: "demo".into(),
            job_id: id,
            name: "test".into(),
            commit_sha: format!("c{i}"),
            status: JobStatus::Failed,
            created_at: at(id),
            finished_at: None,
            log_path: Some(rel),
            git_ref: "main".into(),
        });
        if i < 2 {
            jobs.push(JobRecord { job_id: id + 1, status: JobStatus::Success, created_at: at(id + 1), log_path: None, ..jobs.last().unwrap().clone() });
        }
    }
    store.append_jobs(&jobs).unwrap();
    store
}

#[test]
fn label_stats_reports_bfr_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let store = ten_failures_two_brown(&dir.path().join("s"));
    let before = snapshot(store.root());
    let o = run(&["label", "--store", p(store.root()), "--stats"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("bfr 0.2"), "{}", stdout(&o));
    let v = json(&run(&["label", "--store", p(store.root()), "--stats", "--json"]));
    validate("label", &v);
    assert_eq!(v[0]["bfr"], 0.2);
    assert_eq!(v[0]["n_failed"], 10);
    assert_eq!(v[0]["n_brown"], 2);
    assert_eq!(v[0]["samples_written"], false);
    assert_eq!(snapshot(store.root()), before);
}

#[test]
fn prep_writes_processed_logs_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_store(&dir.path().join("s"), &SynthConfig { failures: 12, seed: 3, ..SynthConfig::default() });
    let out = dir.path().join("prepped");
    let v = json(&run(&["prep", "--in", p(&dir.path().join("s/logs")), "--out", p(&out), "--json"]));
    validate("prep", &v);
    assert_eq!(v["files"].as_u64().unwrap() as usize, corpus.logs.len());
    for id in corpus.logs.keys() {
        assert!(out.join(format!("{id}.prep.txt")).is_file());
    }
    let stats: Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats, v);
    assert!(v["reduction"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn fetch_fills_a_store_from_the_api() {
    let mut server = mockito::Server::new();
    let jobs = serde_json::json!([
        {"id": 2, "name": "t", "status": "failed", "ref": "main", "created_at": "2024-01-01T00:00:02Z", "finished_at": null, "commit": {"id": "a"}},
        {"id": 1, "name": "t", "status": "success", "ref": "main", "created_at": "2024-01-01T00:00:01Z", "finished_at": null, "commit": {"id": "a"}}
    ]);
    server.mock("GET", "/api/v4/projects/g%2Fp/jobs").match_query(mockito::Matcher::Any).with_body(jobs.to_string()).create();
    server.mock("GET", "/api/v4/projects/g%2Fp/jobs/2/trace").with_body("oops\n").create();
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s");
    let api = format!("{}/api/v4", server.url());
    let o = bin()
        .args(["fetch", "--store", p(&store), "--project", "g/p", "--base-url", &api, "--json"])
        .env("CI_INGEST_TOKEN", "t")
        .output()
        .unwrap();
    let v = json(&o);
    validate("fetch", &v);
    assert_eq!(v[0]["new_jobs"], 2);

    let mut denied = mockito::Server::new();
    denied.mock("GET", mockito::Matcher::Any).with_status(401).create();
    let api = format!("{}/api/v4", denied.url());
    let (code, err) = failure(&run(&["fetch", "--store", p(&dir.path().join("t")), "--project", "1", "--base-url", &api]));
    assert_eq!(code, 3);
    assert_eq!(err["error"], "environment");
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, SMALL).unwrap();
    path
}

/// Overlay with the true labels of the first `n` failures.
fn truth_overlay(path: &Path, corpus: &flakeshot_core::synth::SynthCorpus, n: usize) {
    let rows: Vec<OverlayRow> = corpus
        .truth
        .iter()
        .take(n)
        .map(|(id, t)| OverlayRow { job_id: *id, manual_label: t.label, justification: "read the log".into(), category: t.category.clone() })
        .collect();
    write_overlay(path, &rows).unwrap();
}

#[test]
fn full_pipeline_outputs_match_their_schemas_and_respect_the_write_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d);
    let s = d.join("s");
    let corpus = synthetic_store(&s, &SynthConfig { failures: 120, categories: 2, seed: 5, ..SynthConfig::default() });

    let v = json(&run(&["label", "--store", p(&s), "--json"]));
    validate("label", &v);
    assert_eq!(v[0]["samples_written"], true);
    assert!(s.join("samples.jsonl").is_file());

    let template = d.join("template.csv");
    let v = json(&run(&["sample", "--store", p(&s), "--size", "20", "--seed", "3", "--out", p(&template), "--json"]));
    validate("sample", &v);
    assert_eq!(v["size"], 20);
    assert!(std::fs::read_to_string(&template).unwrap().starts_with("job_id,manual_label,justification,category"));

    let overlay = d.join("overlay.csv");
    truth_overlay(&overlay, &corpus, 80);
    let v = json(&run(&["label", "--store", p(&s), "--overlay", p(&overlay), "--json"]));
    validate("label", &v);
    assert_eq!(v[0]["n_manual"], 80);
    assert!(v[0]["error_rate"].is_number());

    let frozen = snapshot(&s);
    let c = p(&cfg);

    let bundle = d.join("bundle");
    let v = json(&run(&["train", "--store", p(&s), "--shots", "4", "--seed", "1", "--out", p(&bundle), "--json"]));
    validate("train", &v);
    assert_eq!(v["train_job_ids"].as_array().unwrap().len(), 8);

    let some_log = s.join("logs").join(format!("{}.log", corpus.logs.keys().next().unwrap()));
    let v = json(&run(&["predict", "--bundle", p(&bundle), "--log", p(&some_log), "--json"]));
    validate("predict", &v);
    let mut child = bin().args(["predict", "--bundle", p(&bundle), "--log", "-", "--json"]).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(&std::fs::read(&some_log).unwrap()).unwrap();
    let piped = json(&child.wait_with_output().unwrap());
    assert_eq!(piped["predictions"][0]["probability"], v["predictions"][0]["probability"]);

    let base = d.join("base");
    let v = json(&run(&["baseline", "train", "--project", p(&s), "--exclude-manual", "--seed", "2", "--out", p(&base), "--config", c, "--json"]));
    validate("baseline-train", &v);
    assert_eq!(v["excluded"], 80);
    let manual_id = corpus.truth.keys().next().unwrap().to_string();
    let v = json(&run(&["baseline", "predict", "--model", p(&base), "--project", p(&s), "--job", &manual_id, "--json"]));
    validate("baseline-predict", &v);

    let fsl = d.join("fsl.json");
    let o = run(&["mccv", "--store", p(&s), "--seed", "7", "--config", c, "--out", p(&fsl), "--json"]);
    let v = json(&o);
    validate("mccv", &v);
    assert_eq!(std::fs::read(&fsl).unwrap(), o.stdout);
    assert_eq!(v["per_repeat"].as_array().unwrap().len(), 3);

    let sota = d.join("sota.json");
    let v = json(&run(&["mccv", "--store", p(&s), "--seed", "7", "--config", c, "--trainer", "baseline", "--model", p(&base), "--out", p(&sota), "--json"]));
    validate("mccv", &v);
    assert_eq!(v["trainer"], "baseline");

    let v = json(&run(&["sweep", "--store", p(&s), "--shots", "2,4", "--seed", "7", "--config", c, "--json"]));
    validate("sweep", &v);
    assert_eq!(v["projects"][0]["sweep"]["reference_shots"], 4);

    let other = d.join("other.jsonl");
    synthetic_samples(&other, &SynthConfig { failures: 80, categories: 2, seed: 6, dialect: 2, project_id: "other".into(), ..SynthConfig::default() });
    let cross = d.join("cross.json");
    let v = json(&run(&["cross", "--project-data", &format!("os={}", p(&s)), "--project-data", &format!("b={}", p(&other)), "--seed", "7", "--config", c, "--out", p(&cross), "--json"]));
    validate("cross", &v);
    assert_eq!(v["projects"], serde_json::json!(["os", "b"]));

    let v = json(&run(&[
        "report",
        "--format",
        "json",
        "--labels",
        &format!("os={}", p(&s)),
        "--result",
        &format!("os:FSL={}", p(&fsl)),
        "--result",
        &format!("os:SOTA={}", p(&sota)),
        "--cross",
        p(&cross),
        "--cross-baseline",
        &format!("os={}", p(&sota)),
    ]));
    validate("report", &v);
    assert_eq!(v["labeling"][0]["auto_intermittent"].as_u64().unwrap() + v["labeling"][0]["auto_regular"].as_u64().unwrap(), 80);
    let md = stdout(&run(&["report", "--result", &format!("os:FSL={}", p(&fsl)), "--cross", p(&cross)]));
    assert!(md.contains("| Project |") && md.contains("Median") && md.contains("Pred \\ Train"), "{md}");

    assert_eq!(snapshot(&s), frozen, "a read-only command modified the store");
}

#[test]
fn mccv_reports_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.jsonl");
    synthetic_samples(&samples, &SynthConfig { failures: 60, categories: 2, seed: 8, ..SynthConfig::default() });
    let go = |jobs: &str, out: &str| {
        let path = dir.path().join(out);
        let o = run(&["mccv", "--samples", p(&samples), "--seed", "7", "--repeats", "4", "--trials", "2", "--shots", "4", "--jobs", jobs, "--out", p(&path)]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(path).unwrap()
    };
    let a = go("1", "a.json");
    assert_eq!(a, go("1", "b.json"));
    assert_eq!(a, go("4", "c.json"));
}

#[test]
fn config_seed_counts_as_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.jsonl");
    synthetic_samples(&samples, &SynthConfig { failures: 60, categories: 2, seed: 8, ..SynthConfig::default() });
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[mccv]\nrepeats = 2\ntrials = 1\nshots = 3\nmaster_seed = 11\n").unwrap();
    let v = json(&run(&["mccv", "--samples", p(&samples), "--config", p(&cfg), "--json"]));
    assert_eq!(v["config"]["master_seed"], 11);
    let v = json(&run(&["mccv", "--samples", p(&samples), "--config", p(&cfg), "--seed", "12", "--json"]));
    assert_eq!(v["config"]["master_seed"], 12);
}
