//! Model bundle directories: `meta.json`, `head.json`, `provider.bin`.
//! Baseline model directories: `meta.json` (vote weights and
//! hyperparameters), `tfidf.json`, `selected.json`, `model1.json`,
//! `model2.json`.

use std::fs;
use std::path::{Path, PathBuf};

use flakeshot_core::baseline::{SotaHyperParams, VotingModel};
use flakeshot_core::fewshot::{FewShotError, LogisticHead, ModelBundle, TrainingMetadata};
use flakeshot_core::PrepConfig;
use serde::{Deserialize, Serialize};

use crate::provider::{Provider, ProviderError};

pub const BUNDLE_FORMAT: u32 = 1;
pub const BASELINE_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, expected: u32, found: u32 },
    #[error("invalid bundle: {0}")]
    Invalid(FewShotError),
    #[error(transparent)]
    Provider(ProviderError),
}

impl BundleError {
    pub fn is_environment(&self) -> bool {
        matches!(self, BundleError::Provider(ProviderError::NotCompiled | ProviderError::Weights(_)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleMeta {
    schema_version: u32,
    provider_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_dir: Option<PathBuf>,
    prep_config: PrepConfig,
    metadata: TrainingMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineMeta {
    schema_version: u32,
    w1: f64,
    w2: f64,
    hyperparams: SotaHyperParams,
    attribution_method: String,
    cv_f1: Option<f64>,
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("bundle parts serialize") + "\n"
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BundleError> {
    fs::write(path, bytes).map_err(|source| BundleError::Io { path: path.to_path_buf(), source })
}

fn read(path: &Path) -> Result<Vec<u8>, BundleError> {
    fs::read(path).map_err(|source| BundleError::Io { path: path.to_path_buf(), source })
}

fn json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BundleError> {
    serde_json::from_slice(&read(path)?).map_err(|e| BundleError::Corrupt { path: path.to_path_buf(), message: e.to_string() })
}

/// Reads only `schema_version` so a newer layout reports a version error
/// rather than a parse error.
fn check_version(path: &Path, expected: u32) -> Result<(), BundleError> {
    #[derive(Deserialize)]
    struct Probe {
        schema_version: u32,
    }
    let probe: Probe = json(path)?;
    if probe.schema_version != expected {
        return Err(BundleError::VersionMismatch { path: path.to_path_buf(), expected, found: probe.schema_version });
    }
    Ok(())
}

pub fn save_bundle(bundle: &ModelBundle<Provider>, dir: &Path) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(|source| BundleError::Io { path: dir.to_path_buf(), source })?;
    let meta = BundleMeta {
        schema_version: BUNDLE_FORMAT,
        provider_kind: bundle.provider.kind().to_string(),
        model_dir: bundle.provider.model_dir(),
        prep_config: bundle.prep_config.clone(),
        metadata: bundle.metadata.clone(),
    };
    write(&dir.join("meta.json"), pretty(&meta).as_bytes())?;
    write(&dir.join("head.json"), pretty(&bundle.head).as_bytes())?;
    write(&dir.join("provider.bin"), &bundle.provider.to_bytes())
}

pub fn load_bundle(dir: &Path) -> Result<ModelBundle<Provider>, BundleError> {
    let meta_path = dir.join("meta.json");
    check_version(&meta_path, BUNDLE_FORMAT)?;
    let meta: BundleMeta = json(&meta_path)?;
    let head: LogisticHead = json(&dir.join("head.json"))?;
    let bin = dir.join("provider.bin");
    let provider = Provider::from_bytes(&meta.provider_kind, &read(&bin)?, meta.model_dir.as_deref()).map_err(|e| match e {
        ProviderError::Model(FewShotError::Corrupt(message)) => BundleError::Corrupt { path: bin.clone(), message },
        ProviderError::Model(FewShotError::VersionMismatch { expected, found }) => BundleError::VersionMismatch { path: bin.clone(), expected, found },
        other => BundleError::Provider(other),
    })?;
    let bundle = ModelBundle { prep_config: meta.prep_config, provider, head, metadata: meta.metadata };
    bundle.validate().map_err(BundleError::Invalid)?;
    Ok(bundle)
}

pub fn save_baseline(model: &VotingModel, dir: &Path) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(|source| BundleError::Io { path: dir.to_path_buf(), source })?;
    let meta = BaselineMeta {
        schema_version: BASELINE_FORMAT,
        w1: model.w1,
        w2: model.w2,
        hyperparams: model.hyperparams,
        attribution_method: model.attribution_method.clone(),
        cv_f1: model.cv_f1,
    };
    write(&dir.join("meta.json"), pretty(&meta).as_bytes())?;
    write(&dir.join("tfidf.json"), pretty(&model.tfidf).as_bytes())?;
    write(&dir.join("selected.json"), pretty(&model.selected).as_bytes())?;
    write(&dir.join("model1.json"), serde_json::to_string(&model.model1).expect("trees serialize").as_bytes())?;
    write(&dir.join("model2.json"), serde_json::to_string(&model.model2).expect("trees serialize").as_bytes())
}

pub fn load_baseline(dir: &Path) -> Result<VotingModel, BundleError> {
    let meta_path = dir.join("meta.json");
    check_version(&meta_path, BASELINE_FORMAT)?;
    let meta: BaselineMeta = json(&meta_path)?;
    let model = VotingModel {
        tfidf: json(&dir.join("tfidf.json"))?,
        selected: json(&dir.join("selected.json"))?,
        model1: json(&dir.join("model1.json"))?,
        model2: json(&dir.join("model2.json"))?,
        w1: meta.w1,
        w2: meta.w2,
        hyperparams: meta.hyperparams,
        attribution_method: meta.attribution_method,
        cv_f1: meta.cv_f1,
    };
    if let Some(&c) = model.selected.iter().find(|&&c| c >= model.tfidf.n_features()) {
        return Err(BundleError::Corrupt { path: dir.join("selected.json"), message: format!("column {c} outside the vocabulary") });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flakeshot_core::fewshot::{train_bundle, FewShotHyperParams};
    use flakeshot_core::synth::{generate, SynthConfig};
    use flakeshot_core::LabeledSample;

    use crate::provider::ProviderSpec;

    fn trained() -> (ModelBundle<Provider>, Vec<String>) {
        let corpus = generate(&SynthConfig { failures: 40, categories: 2, seed: 4, ..SynthConfig::default() });
        let samples = corpus.labeled_samples(&PrepConfig::default());
        let mut shots: Vec<&LabeledSample> = samples.iter().filter(|s| s.effective_label().is_intermittent()).take(4).collect();
        shots.extend(samples.iter().filter(|s| !s.effective_label().is_intermittent()).take(4));
        let base = Provider::load(&ProviderSpec::Test).unwrap();
        let hp = FewShotHyperParams { body_learning_rate: 1e-3, seed: 3, ..FewShotHyperParams::default() };
        let bundle = train_bundle(&base, &shots, &hp, &PrepConfig::default()).unwrap();
        (bundle, corpus.logs.values().take(10).cloned().collect())
    }

    #[test]
    fn round_trip_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (bundle, probes) = trained();
        save_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        for p in &probes {
            let (a, b) = (bundle.predict(p).unwrap(), loaded.predict(p).unwrap());
            assert_eq!(a.label, b.label);
            assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        }
    }

    #[test]
    fn truncated_and_mismatched_bundles_fail() {
        let dir = tempfile::tempdir().unwrap();
        let (mut bundle, _) = trained();
        save_bundle(&bundle, dir.path()).unwrap();
        let bin = dir.path().join("provider.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Corrupt { .. })));

        bundle.head.weights.pop();
        bundle.head.width -= 1;
        save_bundle(&bundle, dir.path()).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Invalid(FewShotError::WidthMismatch { .. }))));

        let meta = dir.path().join("meta.json");
        let text = fs::read_to_string(&meta).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&meta, text).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::VersionMismatch { found: 9, .. })));
    }
}
