//! Sentence-encoder provider backed by a local BERT-family checkpoint.
//!
//! The transformer stays frozen; fine-tuning trains a square linear adapter
//! on top of its mean-pooled output, initialised to the identity. Frozen
//! embeddings are cached per text and shared between clones, so the HPO
//! trials of one MCCV repeat encode each log once.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use candle_transformers::models::bert::{BertModel, Config};
use flakeshot_core::fewshot::{truncate_tokens, ContrastivePair, EmbeddingProvider, FewShotError};
use tokenizers::{Tokenizer, TruncationParams};

use crate::provider::ProviderError;

const MAGIC: &[u8; 4] = b"FSPT";
const BLOB_VERSION: u32 = 1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Encoder {
    model: BertModel,
    tokenizer: Tokenizer,
    device: Device,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

impl Encoder {
    fn encode(&self, text: &str) -> Result<Arc<Vec<f64>>, FewShotError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(hit.clone());
        }
        let fail = |e: &dyn std::fmt::Display| FewShotError::Provider(format!("encoder: {e}"));
        let enc = self.tokenizer.encode(text, true).map_err(|e| fail(&e))?;
        let ids = Tensor::new(enc.get_ids(), &self.device).and_then(|t| t.unsqueeze(0)).map_err(|e| fail(&e))?;
        let types = ids.zeros_like().map_err(|e| fail(&e))?;
        let mask = Tensor::new(enc.get_attention_mask(), &self.device).and_then(|t| t.unsqueeze(0)).map_err(|e| fail(&e))?;
        let hidden = self.model.forward(&ids, &types, Some(&mask)).map_err(|e| fail(&e))?;
        // mean over the token axis, then unit length
        let pooled = hidden.mean(1).and_then(|t| t.squeeze(0)).and_then(|t| t.to_vec1::<f32>()).map_err(|e| fail(&e))?;
        let norm = pooled.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        let v: Vec<f64> = pooled.iter().map(|&x| if norm > 0.0 { f64::from(x) / norm } else { 0.0 }).collect();
        let v = Arc::new(v);
        self.cache.lock().expect("cache lock").insert(text.to_string(), v.clone());
        Ok(v)
    }
}

#[derive(Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

#[derive(Clone)]
pub struct PretrainedProvider {
    model_dir: PathBuf,
    model_id: String,
    dimension: usize,
    max_tokens: usize,
    encoder: Arc<Encoder>,
    /// Row-major `dimension x dimension`.
    adapter: Vec<f64>,
    adam: Option<Adam>,
}

impl std::fmt::Debug for PretrainedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PretrainedProvider")
            .field("model_dir", &self.model_dir)
            .field("model_id", &self.model_id)
            .field("dimension", &self.dimension)
            .finish_non_exhaustive()
    }
}

impl PretrainedProvider {
    /// Loads `config.json`, `tokenizer.json` and `model.safetensors` from
    /// `dir` onto the CPU.
    pub fn load(dir: &Path) -> Result<Self, ProviderError> {
        let weights = |what: &str, e: &dyn std::fmt::Display| ProviderError::Weights(format!("{}: {what}: {e}", dir.display()));
        let config_text = std::fs::read_to_string(dir.join("config.json")).map_err(|e| weights("config.json", &e))?;
        let config: Config = serde_json::from_str(&config_text).map_err(|e| weights("config.json", &e))?;
        let mut tokenizer = Tokenizer::from_file(dir.join("tokenizer.json")).map_err(|e| weights("tokenizer.json", &e))?;
        let max_len = config.max_position_embeddings;
        tokenizer
            .with_truncation(Some(TruncationParams { max_length: max_len, ..TruncationParams::default() }))
            .map_err(|e| weights("tokenizer.json", &e))?;
        tokenizer.with_padding(None);
        let device = Device::Cpu;
        let bytes = std::fs::read(dir.join("model.safetensors")).map_err(|e| weights("model.safetensors", &e))?;
        let vb = VarBuilder::from_buffered_safetensors(bytes, DType::F32, &device).map_err(|e| weights("model.safetensors", &e))?;
        let model = BertModel::load(vb, &config).map_err(|e| weights("model.safetensors", &e))?;
        let dimension = config.hidden_size;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "encoder".into());
        let mut adapter = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            adapter[i * dimension + i] = 1.0;
        }
        Ok(Self {
            model_dir: dir.to_path_buf(),
            model_id: format!("pretrained:{name}"),
            dimension,
            max_tokens: max_len,
            encoder: Arc::new(Encoder { model, tokenizer, device, cache: Mutex::new(HashMap::new()) }),
            adapter,
            adam: None,
        })
    }

    pub fn model_dir(&self) -> &Path {
        &self.model_dir
    }

    /// Adapter weights: magic, version, dimension, then little-endian f64s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.adapter.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        for w in &self.adapter {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn with_adapter_bytes(mut self, bytes: &[u8]) -> Result<Self, ProviderError> {
        let corrupt = |m: &str| ProviderError::Model(FewShotError::Corrupt(m.to_string()));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("not an adapter blob"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != BLOB_VERSION {
            return Err(ProviderError::Model(FewShotError::VersionMismatch { expected: BLOB_VERSION, found: version }));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if dim != self.dimension {
            return Err(ProviderError::Model(FewShotError::WidthMismatch { expected: self.dimension, found: dim }));
        }
        let body = &bytes[12..];
        if body.len() != dim * dim * 8 {
            return Err(corrupt("adapter blob truncated"));
        }
        self.adapter = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        self.adam = None;
        Ok(self)
    }

    fn frozen(&self, text: &str) -> Result<Arc<Vec<f64>>, FewShotError> {
        self.encoder.encode(&truncate_tokens(text, self.max_tokens))
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dimension;
        (0..d).map(|k| self.adapter[k * d..][..d].iter().zip(x).map(|(w, v)| w * v).sum()).collect()
    }
}

impl EmbeddingProvider for PretrainedProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_input_tokens(&self) -> usize {
        self.max_tokens
    }

    fn fine_tunable(&self) -> bool {
        true
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, FewShotError> {
        Ok(self.apply(&self.frozen(text)?))
    }

    fn begin_fine_tune(&mut self) {
        let n = self.adapter.len();
        self.adam = Some(Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 });
    }

    fn train_step(&mut self, batch: &[&ContrastivePair<'_>], learning_rate: f64) -> Result<f64, FewShotError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let d = self.dimension;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; d * d];
        let mut loss = 0.0;
        for pair in batch {
            let (a, b) = (self.frozen(pair.text_a)?, self.frozen(pair.text_b)?);
            let (u, v) = (self.apply(&a), self.apply(&b));
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let y = pair.target();
            if nu == 0.0 || nv == 0.0 {
                loss += y * y * scale;
                continue;
            }
            let cos = u.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>() / (nu * nv);
            loss += (cos - y) * (cos - y) * scale;
            let g = 2.0 * (cos - y) * scale;
            for k in 0..d {
                let du = g * (v[k] / (nu * nv) - cos * u[k] / (nu * nu));
                let dv = g * (u[k] / (nu * nv) - cos * v[k] / (nv * nv));
                for j in 0..d {
                    grad[k * d + j] += du * a[j] + dv * b[j];
                }
            }
        }
        if !loss.is_finite() {
            return Ok(loss);
        }
        if self.adam.is_none() {
            self.begin_fine_tune();
        }
        let adam = self.adam.as_mut().expect("optimizer initialised");
        adam.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(adam.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(adam.step);
        for (i, g) in grad.into_iter().enumerate() {
            adam.m[i] = ADAM_BETA1 * adam.m[i] + (1.0 - ADAM_BETA1) * g;
            adam.v[i] = ADAM_BETA2 * adam.v[i] + (1.0 - ADAM_BETA2) * g * g;
            self.adapter[i] -= learning_rate * (adam.m[i] / bc1) / ((adam.v[i] / bc2).sqrt() + ADAM_EPS);
        }
        Ok(loss)
    }
}
