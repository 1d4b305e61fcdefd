//! Offline embedding provider: signed hashed term frequencies projected to a
//! dense space through a trainable linear map.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use super::provider::{truncate_tokens, EmbeddingProvider};
use super::{ContrastivePair, FewShotError};
use crate::seed;

const MAGIC: &[u8; 4] = b"FSHP";
const BLOB_VERSION: u32 = 1;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashingProvider {
    model_id: String,
    dimension: usize,
    buckets: usize,
    max_tokens: usize,
    /// Bucket-major: the column for bucket `b` is `weights[b * dimension..][..dimension]`.
    weights: Vec<f64>,
    adam: Option<Adam>,
}

impl HashingProvider {
    pub const DEFAULT_MODEL_ID: &'static str = "hashing-test-v1";

    /// Builds a provider whose initial projection is derived from `model_id`,
    /// so two providers with the same id and shape are identical.
    pub fn new(model_id: &str, dimension: usize, buckets: usize, max_tokens: usize) -> Self {
        assert!(dimension > 0 && buckets > 0 && max_tokens > 0);
        let mut rng = seed::rng(seed::fnv1a(model_id.as_bytes()) ^ ((dimension as u64) << 32) ^ buckets as u64);
        let a = libm::sqrt(3.0 / dimension as f64);
        let weights = (0..dimension * buckets).map(|_| rng.random_range(-a..a)).collect();
        Self {
            model_id: model_id.to_string(),
            dimension,
            buckets,
            max_tokens,
            weights,
            adam: None,
        }
    }

    /// Unit-norm signed term frequencies, sorted by bucket.
    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let text = truncate_tokens(text, self.max_tokens);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in text.split_whitespace() {
            let h = seed::fnv1a(tok.as_bytes());
            let bucket = (h % self.buckets as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            *acc.entry(bucket).or_insert(0.0) += sign;
        }
        let norm = libm::sqrt(acc.values().map(|v| v * v).sum::<f64>());
        acc.into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|(b, v)| (b, v / norm))
            .collect()
    }

    fn project(&self, feats: &[(usize, f64)]) -> Vec<f64> {
        let d = self.dimension;
        let mut u = vec![0.0; d];
        for &(b, x) in feats {
            let col = &self.weights[b * d..(b + 1) * d];
            for (ui, w) in u.iter_mut().zip(col) {
                *ui += x * w;
            }
        }
        u
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.model_id.len() + self.weights.len() * 8);
        out.extend_from_slice(MAGIC);
        for v in [BLOB_VERSION, self.dimension as u32, self.buckets as u32, self.max_tokens as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.model_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.model_id.as_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FewShotError> {
        let corrupt = |why: &str| FewShotError::Corrupt(why.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8], FewShotError> {
            if cur.len() < n {
                return Err(corrupt("provider blob truncated"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(corrupt("bad provider blob magic"));
        }
        let mut u32_at = || -> Result<u32, FewShotError> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap())) };
        let version = u32_at()?;
        if version != BLOB_VERSION {
            return Err(FewShotError::VersionMismatch { expected: BLOB_VERSION, found: version });
        }
        let dimension = u32_at()? as usize;
        let buckets = u32_at()? as usize;
        let max_tokens = u32_at()? as usize;
        let id_len = u32_at()? as usize;
        if dimension == 0 || buckets == 0 || max_tokens == 0 {
            return Err(corrupt("zero-sized provider shape"));
        }
        let model_id = core::str::from_utf8(take(id_len)?)
            .map_err(|_| corrupt("model id is not UTF-8"))?
            .to_string();
        let n = dimension.checked_mul(buckets).ok_or_else(|| corrupt("shape overflow"))?;
        let raw = take(n.checked_mul(8).ok_or_else(|| corrupt("shape overflow"))?)?;
        if !cur.is_empty() {
            return Err(corrupt("trailing bytes after provider blob"));
        }
        let weights = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { model_id, dimension, buckets, max_tokens, weights, adam: None })
    }

    /// Whether the trainable state equals `other`'s (optimizer state ignored).
    pub fn same_weights(&self, other: &Self) -> bool {
        self.weights == other.weights
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self::new(Self::DEFAULT_MODEL_ID, 64, 2048, 512)
    }
}

impl EmbeddingProvider for HashingProvider {
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
        Ok(self.project(&self.features(text)))
    }

    fn begin_fine_tune(&mut self) {
        self.adam = Some(Adam {
            m: vec![0.0; self.weights.len()],
            v: vec![0.0; self.weights.len()],
            step: 0,
        });
    }

    fn train_step(&mut self, batch: &[&ContrastivePair<'_>], learning_rate: f64) -> Result<f64, FewShotError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let d = self.dimension;
        let scale = 1.0 / batch.len() as f64;
        let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut loss = 0.0;
        for pair in batch {
            let fa = self.features(pair.text_a);
            let fb = self.features(pair.text_b);
            let u = self.project(&fa);
            let v = self.project(&fb);
            let nu = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
            let nv = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            let y = pair.target();
            if nu == 0.0 || nv == 0.0 {
                loss += y * y * scale;
                continue;
            }
            let cos = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
            loss += (cos - y) * (cos - y) * scale;
            let g = 2.0 * (cos - y) * scale;
            // d cos / du = v / (|u||v|) - cos * u / |u|^2
            let du: Vec<f64> = (0..d).map(|k| g * (v[k] / (nu * nv) - cos * u[k] / (nu * nu))).collect();
            let dv: Vec<f64> = (0..d).map(|k| g * (u[k] / (nu * nv) - cos * v[k] / (nv * nv))).collect();
            for (feats, dvec) in [(&fa, &du), (&fb, &dv)] {
                for &(b, x) in feats.iter() {
                    let slot = grads.entry(b).or_insert_with(|| vec![0.0; d]);
                    for (s, gk) in slot.iter_mut().zip(dvec) {
                        *s += x * gk;
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Ok(loss);
        }
        if self.adam.is_none() {
            self.begin_fine_tune();
        }
        let adam = self.adam.as_mut().unwrap();
        adam.step += 1;
        let bc1 = 1.0 - libm::pow(ADAM_BETA1, f64::from(adam.step));
        let bc2 = 1.0 - libm::pow(ADAM_BETA2, f64::from(adam.step));
        for (b, g) in grads {
            for (k, gk) in g.into_iter().enumerate() {
                let i = b * d + k;
                adam.m[i] = ADAM_BETA1 * adam.m[i] + (1.0 - ADAM_BETA1) * gk;
                adam.v[i] = ADAM_BETA2 * adam.v[i] + (1.0 - ADAM_BETA2) * gk * gk;
                let mhat = adam.m[i] / bc1;
                let vhat = adam.v[i] / bc2;
                self.weights[i] -= learning_rate * mhat / (libm::sqrt(vhat) + ADAM_EPS);
            }
        }
        Ok(loss)
    }
}
