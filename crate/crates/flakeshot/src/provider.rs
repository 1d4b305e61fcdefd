//! Runtime choice of embedding provider.

use std::path::PathBuf;

use flakeshot_core::fewshot::{ContrastivePair, EmbeddingProvider, FewShotError, HashingProvider};
use serde::{Deserialize, Serialize};

#[cfg(feature = "pretrained")]
use crate::pretrained::PretrainedProvider;

/// What the user asked for on the command line or in a config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Offline hashing provider; needs no weights.
    Test,
    /// Local sentence-encoder directory with `config.json`,
    /// `tokenizer.json` and `model.safetensors`.
    Pretrained { model_dir: PathBuf },
}

impl ProviderSpec {
    /// `test` or `pretrained:<dir>`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "test" => Some(Self::Test),
            _ => s.strip_prefix("pretrained:").map(|d| Self::Pretrained { model_dir: PathBuf::from(d) }),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("pretrained provider support was not compiled in (enable the `pretrained` feature)")]
    NotCompiled,
    #[error("model weights unavailable: {0}")]
    Weights(String),
    #[error(transparent)]
    Model(#[from] FewShotError),
}

#[derive(Debug, Clone)]
pub enum Provider {
    Hashing(HashingProvider),
    #[cfg(feature = "pretrained")]
    Pretrained(PretrainedProvider),
}

impl Provider {
    pub fn load(spec: &ProviderSpec) -> Result<Self, ProviderError> {
        match spec {
            ProviderSpec::Test => Ok(Self::Hashing(HashingProvider::default())),
            #[cfg(feature = "pretrained")]
            ProviderSpec::Pretrained { model_dir } => Ok(Self::Pretrained(PretrainedProvider::load(model_dir)?)),
            #[cfg(not(feature = "pretrained"))]
            ProviderSpec::Pretrained { .. } => Err(ProviderError::NotCompiled),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Hashing(_) => "hashing",
            #[cfg(feature = "pretrained")]
            Self::Pretrained(_) => "pretrained",
        }
    }

    /// Trainable state as bytes; the frozen encoder of a pretrained provider
    /// is referenced by path, not copied.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Self::Hashing(p) => p.to_bytes(),
            #[cfg(feature = "pretrained")]
            Self::Pretrained(p) => p.to_bytes(),
        }
    }

    pub fn from_bytes(kind: &str, bytes: &[u8], model_dir: Option<&std::path::Path>) -> Result<Self, ProviderError> {
        match kind {
            "hashing" => Ok(Self::Hashing(HashingProvider::from_bytes(bytes)?)),
            #[cfg(feature = "pretrained")]
            "pretrained" => {
                let dir = model_dir.ok_or_else(|| ProviderError::Weights("bundle does not name a model directory".into()))?;
                Ok(Self::Pretrained(PretrainedProvider::load(dir)?.with_adapter_bytes(bytes)?))
            }
            #[cfg(not(feature = "pretrained"))]
            "pretrained" => {
                let _ = model_dir;
                Err(ProviderError::NotCompiled)
            }
            other => Err(ProviderError::Model(FewShotError::Corrupt(format!("unknown provider kind {other:?}")))),
        }
    }

    pub fn model_dir(&self) -> Option<PathBuf> {
        match self {
            Self::Hashing(_) => None,
            #[cfg(feature = "pretrained")]
            Self::Pretrained(p) => Some(p.model_dir().to_path_buf()),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Provider::Hashing($p) => $e,
            #[cfg(feature = "pretrained")]
            Provider::Pretrained($p) => $e,
        }
    };
}

impl EmbeddingProvider for Provider {
    fn model_id(&self) -> &str {
        delegate!(self, p => p.model_id())
    }
    fn dimension(&self) -> usize {
        delegate!(self, p => p.dimension())
    }
    fn max_input_tokens(&self) -> usize {
        delegate!(self, p => p.max_input_tokens())
    }
    fn fine_tunable(&self) -> bool {
        delegate!(self, p => p.fine_tunable())
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, FewShotError> {
        delegate!(self, p => p.embed(text))
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, FewShotError> {
        delegate!(self, p => p.embed_batch(texts))
    }
    fn begin_fine_tune(&mut self) {
        delegate!(self, p => p.begin_fine_tune())
    }
    fn train_step(&mut self, batch: &[&ContrastivePair<'_>], learning_rate: f64) -> Result<f64, FewShotError> {
        delegate!(self, p => p.train_step(batch, learning_rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!(ProviderSpec::parse("test"), Some(ProviderSpec::Test));
        assert_eq!(ProviderSpec::parse("pretrained:/m"), Some(ProviderSpec::Pretrained { model_dir: "/m".into() }));
        assert_eq!(ProviderSpec::parse("bert"), None);
    }

    #[test]
    fn hashing_round_trips() {
        let p = Provider::load(&ProviderSpec::Test).unwrap();
        let q = Provider::from_bytes(p.kind(), &p.to_bytes(), None).unwrap();
        assert_eq!(p.embed("a b c").unwrap(), q.embed("a b c").unwrap());
    }

    #[cfg(not(feature = "pretrained"))]
    #[test]
    fn pretrained_needs_the_feature() {
        let spec = ProviderSpec::Pretrained { model_dir: "/nonexistent".into() };
        assert!(matches!(Provider::load(&spec), Err(ProviderError::NotCompiled)));
    }
}
