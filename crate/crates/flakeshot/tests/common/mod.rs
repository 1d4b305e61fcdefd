#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flakeshot::store::{write_samples, ProjectStore};
use flakeshot_core::synth::{generate, SynthConfig, SynthCorpus};
use flakeshot_core::PrepConfig;
use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flakeshot"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("CI_INGEST_TOKEN").output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json(o: &Output) -> Value {
    assert!(o.status.success(), "command failed: {}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stdout(o)))
}

/// Exit code plus the parsed stderr failure line.
pub fn failure(o: &Output) -> (i32, Value) {
    let line = stderr(o);
    let v: Value = serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("stderr is not one JSON line ({e}): {line}"));
    validate("error", &v);
    (o.status.code().expect("exit code"), v)
}

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

pub fn validate(name: &str, instance: &Value) {
    let path = schema_dir().join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap_or_else(|e| panic!("{name}: bad schema: {e}"));
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name} output violates its schema:\n{}\n{instance:#}", errors.join("\n"));
}

/// Writes a synthetic corpus as a store: manifest plus one log per failure.
pub fn synthetic_store(root: &Path, cfg: &SynthConfig) -> SynthCorpus {
    let corpus = generate(cfg);
    let store = ProjectStore::create(root).unwrap();
    for (id, log) in &corpus.logs {
        store.write_log(*id, log).unwrap();
    }
    store.append_jobs(&corpus.jobs).unwrap();
    corpus
}

/// Writes the corpus's manually labeled samples as a samples file.
pub fn synthetic_samples(path: &Path, cfg: &SynthConfig) -> SynthCorpus {
    let corpus = generate(cfg);
    write_samples(path, &corpus.labeled_samples(&PrepConfig::default())).unwrap();
    corpus
}
