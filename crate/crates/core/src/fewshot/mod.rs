//! Few-shot training and inference.
//!
//! A model is the composition `C(ST(LP(log)))`: the log pre-processor, a
//! sentence-embedding provider fine-tuned on contrastive pairs, and a
//! logistic-regression head.

mod hashing;
mod head;
mod provider;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use hashing::HashingProvider;
pub use head::{label_for, sigmoid, train_head, LogisticHead, L2_C};
pub use provider::{cosine, truncate_tokens, EmbeddingProvider};

use crate::logprep::{preprocess, PrepConfig};
use crate::{seed, Label, LabeledSample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FewShotError {
    #[error("class {label} has {count} sample(s); at least 2 are needed to form pairs")]
    ClassTooSmall { label: Label, count: usize },
    #[error("provider does not support fine-tuning")]
    NotFineTunable,
    #[error("no contrastive pairs to train on")]
    EmptyPairs,
    #[error("training diverged (learning rate {learning_rate:e}, epochs {num_epochs}, batch size {batch_size})")]
    Diverged { learning_rate: f64, num_epochs: u32, batch_size: u32 },
    #[error("classifier needs both classes in its training set")]
    SingleClass,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("empty log")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("hyperparameter out of range: {0}")]
    InvalidHyperParams(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt model data: {0}")]
    Corrupt(String),
    #[error("embedding provider failed: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastivePair<'a> {
    pub text_a: &'a str,
    pub text_b: &'a str,
    /// 1 when both texts share a class, 0 otherwise.
    pub similarity_label: u8,
}

impl ContrastivePair<'_> {
    pub fn target(&self) -> f64 {
        f64::from(self.similarity_label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotHyperParams {
    pub body_learning_rate: f64,
    pub num_epochs: u32,
    pub batch_size: u32,
    pub max_iter: u32,
    pub pair_multiplier: u32,
    pub seed: u64,
}

impl Default for FewShotHyperParams {
    fn default() -> Self {
        Self {
            body_learning_rate: 2e-5,
            num_epochs: 1,
            batch_size: 8,
            max_iter: 100,
            pair_multiplier: 20,
            seed: 0,
        }
    }
}

impl FewShotHyperParams {
    /// Checks every field against [`HpSpace::default`].
    pub fn validate(&self) -> Result<(), FewShotError> {
        HpSpace::default().check(self)
    }
}

/// Search domains for [`FewShotHyperParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpSpace {
    pub learning_rate_min: f64,
    pub learning_rate_max: f64,
    pub num_epochs: Vec<u32>,
    pub batch_size: Vec<u32>,
    pub max_iter: Vec<u32>,
    pub pair_multiplier: u32,
}

impl Default for HpSpace {
    fn default() -> Self {
        Self {
            learning_rate_min: 1e-6,
            learning_rate_max: 1e-3,
            num_epochs: alloc::vec![1, 2],
            batch_size: alloc::vec![2, 4, 8],
            max_iter: alloc::vec![50, 100, 150, 200, 250, 300],
            pair_multiplier: 20,
        }
    }
}

impl HpSpace {
    pub fn check(&self, hp: &FewShotHyperParams) -> Result<(), FewShotError> {
        let bad = |what: &str| Err(FewShotError::InvalidHyperParams(what.to_string()));
        if !(hp.body_learning_rate >= self.learning_rate_min && hp.body_learning_rate <= self.learning_rate_max) {
            return bad("body_learning_rate");
        }
        if !self.num_epochs.contains(&hp.num_epochs) {
            return bad("num_epochs");
        }
        if !self.batch_size.contains(&hp.batch_size) {
            return bad("batch_size");
        }
        if !self.max_iter.contains(&hp.max_iter) {
            return bad("max_iter");
        }
        if hp.pair_multiplier == 0 {
            return bad("pair_multiplier");
        }
        Ok(())
    }

    /// Whether the space itself is sampleable.
    pub fn validate(&self) -> Result<(), FewShotError> {
        let bad = |what: &str| Err(FewShotError::InvalidHyperParams(what.to_string()));
        if !(self.learning_rate_min > 0.0 && self.learning_rate_min <= self.learning_rate_max && self.learning_rate_max.is_finite()) {
            return bad("learning rate range");
        }
        if self.num_epochs.is_empty() || self.batch_size.is_empty() || self.max_iter.is_empty() {
            return bad("empty categorical domain");
        }
        if self.batch_size.contains(&0) || self.pair_multiplier == 0 {
            return bad("zero batch size or pair multiplier");
        }
        Ok(())
    }
}

/// Builds `ceil(multiplier * n / 2)` positive and as many negative pairs.
///
/// Anchors cycle through the samples in order; each anchor's partner is
/// drawn uniformly from the same class (excluding the anchor itself) for
/// positives and from the other class for negatives.
pub fn generate_pairs<'a>(
    train_set: &[(&'a str, Label)],
    multiplier: u32,
    seed: u64,
) -> Result<Vec<ContrastivePair<'a>>, FewShotError> {
    if multiplier == 0 {
        return Err(FewShotError::InvalidHyperParams("pair_multiplier".to_string()));
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, (_, l)) in train_set.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    for label in [Label::Intermittent, Label::Regular] {
        let count = by_class.get(&label).map_or(0, Vec::len);
        if count < 2 {
            return Err(FewShotError::ClassTooSmall { label, count });
        }
    }
    let n = train_set.len();
    let half = (multiplier as usize * n).div_ceil(2);
    let mut rng = seed::rng(seed);
    let mut pairs = Vec::with_capacity(2 * half);
    for k in 0..half {
        let a = k % n;
        let same = &by_class[&train_set[a].1];
        // skip over the anchor's own slot so a text is never paired with itself
        let own = same.iter().position(|&i| i == a).unwrap();
        let mut j = rng.random_range(0..same.len() - 1);
        if j >= own {
            j += 1;
        }
        pairs.push(ContrastivePair { text_a: train_set[a].0, text_b: train_set[same[j]].0, similarity_label: 1 });
    }
    for k in 0..half {
        let a = k % n;
        let other = &by_class[&train_set[a].1.flipped()];
        let j = other[rng.random_range(0..other.len())];
        pairs.push(ContrastivePair { text_a: train_set[a].0, text_b: train_set[j].0, similarity_label: 0 });
    }
    Ok(pairs)
}

/// Mean cosine of positive pairs minus mean cosine of negative pairs.
pub fn pair_margin<P: EmbeddingProvider>(provider: &P, pairs: &[ContrastivePair<'_>]) -> Result<f64, FewShotError> {
    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        for t in [p.text_a, p.text_b] {
            if !cache.contains_key(t) {
                cache.insert(t, provider.embed(t)?);
            }
        }
    }
    let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0usize, 0.0, 0usize);
    for p in pairs {
        let c = cosine(&cache[p.text_a], &cache[p.text_b]);
        if p.similarity_label == 1 {
            pos += c;
            npos += 1;
        } else {
            neg += c;
            nneg += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(mean(pos, npos) - mean(neg, nneg))
}

/// Fine-tunes a copy of `provider` on `pairs`.
///
/// The pair order is reshuffled every epoch from `hp.seed`. After each epoch
/// the training-pair margin is measured; the returned state is the one with
/// the best margin among the input and every epoch, so the margin never
/// falls below the input's. Zero epochs return an identical copy.
pub fn fine_tune<P: EmbeddingProvider + Clone>(
    provider: &P,
    pairs: &[ContrastivePair<'_>],
    hp: &FewShotHyperParams,
) -> Result<P, FewShotError> {
    if !provider.fine_tunable() {
        return Err(FewShotError::NotFineTunable);
    }
    if pairs.is_empty() {
        return Err(FewShotError::EmptyPairs);
    }
    if hp.num_epochs == 0 {
        return Ok(provider.clone());
    }
    let diverged = || FewShotError::Diverged {
        learning_rate: hp.body_learning_rate,
        num_epochs: hp.num_epochs,
        batch_size: hp.batch_size,
    };
    let batch_size = hp.batch_size.max(1) as usize;
    let mut best_margin = pair_margin(provider, pairs)?;
    let mut best: Option<P> = None;
    let mut model = provider.clone();
    model.begin_fine_tune();
    let mut rng = seed::rng(seed::derive(hp.seed, &[0xF1]));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..hp.num_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&ContrastivePair<'_>> = chunk.iter().map(|&i| &pairs[i]).collect();
            let loss = model.train_step(&batch, hp.body_learning_rate)?;
            if !loss.is_finite() {
                return Err(diverged());
            }
        }
        let margin = pair_margin(&model, pairs)?;
        if !margin.is_finite() {
            return Err(diverged());
        }
        if margin > best_margin {
            best_margin = margin;
            best = Some(model.clone());
        }
    }
    Ok(best.unwrap_or_else(|| provider.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub shots: usize,
    pub seed: u64,
    pub hyperparams: FewShotHyperParams,
    pub train_job_ids: Vec<u64>,
    pub l2_c: f64,
    pub provider_model_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<P> {
    pub prep_config: PrepConfig,
    pub provider: P,
    pub head: LogisticHead,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub probability: f64,
}

impl<P: EmbeddingProvider> ModelBundle<P> {
    /// Classifier width must equal the embedding dimension.
    pub fn validate(&self) -> Result<(), FewShotError> {
        self.head.check_width()?;
        if self.head.width != self.provider.dimension() {
            return Err(FewShotError::WidthMismatch { expected: self.provider.dimension(), found: self.head.width });
        }
        Ok(())
    }

    /// Classifies a log that has already been through pre-processing.
    pub fn predict_processed(&self, processed: &str) -> Result<Prediction, FewShotError> {
        let emb = self.provider.embed(processed)?;
        let probability = self.head.predict_proba(&emb)?;
        Ok(Prediction { label: label_for(probability), probability })
    }

    /// Classifies a raw job log. Blank input is rejected.
    pub fn predict(&self, raw_log: &str) -> Result<Prediction, FewShotError> {
        if raw_log.trim().is_empty() {
            return Err(FewShotError::EmptyInput);
        }
        self.predict_processed(&preprocess(raw_log, &self.prep_config).text)
    }

    pub fn predict_batch(&self, raw_logs: &[&str]) -> Result<Vec<Prediction>, FewShotError> {
        raw_logs.iter().map(|l| self.predict(l)).collect()
    }
}

/// Generates pairs, fine-tunes `base`, then fits the head on the fine-tuned
/// embeddings of the same samples. `samples` carry pre-processed text.
pub fn train_bundle<P: EmbeddingProvider + Clone>(
    base: &P,
    samples: &[&LabeledSample],
    hp: &FewShotHyperParams,
    prep_config: &PrepConfig,
) -> Result<ModelBundle<P>, FewShotError> {
    if samples.is_empty() {
        return Err(FewShotError::EmptyTrainingSet);
    }
    let train: Vec<(&str, Label)> = samples.iter().map(|s| (s.processed_log.as_str(), s.effective_label())).collect();
    let pairs = generate_pairs(&train, hp.pair_multiplier, seed::derive(hp.seed, &[0xA1]))?;
    let provider = fine_tune(base, &pairs, hp)?;
    let texts: Vec<&str> = train.iter().map(|(t, _)| *t).collect();
    let embeddings = provider.embed_batch(&texts)?;
    let labels: Vec<Label> = train.iter().map(|(_, l)| *l).collect();
    let head = train_head(&embeddings, &labels, hp.max_iter)?;
    let positives = labels.iter().filter(|l| l.is_intermittent()).count();
    let metadata = TrainingMetadata {
        shots: positives.min(labels.len() - positives),
        seed: hp.seed,
        hyperparams: hp.clone(),
        train_job_ids: samples.iter().map(|s| s.job_id).collect(),
        l2_c: L2_C,
        provider_model_id: provider.model_id().to_string(),
    };
    Ok(ModelBundle { prep_config: prep_config.clone(), provider, head, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use Label::{Intermittent as I, Regular as R};

    fn texts(n: usize, stem: &str) -> Vec<String> {
        (0..n).map(|i| format!("{stem} sample {i}")).collect()
    }

    #[test]
    fn pair_counts_and_balance() {
        let a = texts(2, "x");
        let b = texts(2, "y");
        let set: Vec<(&str, Label)> = vec![(&a[0], I), (&a[1], I), (&b[0], R), (&b[1], R)];
        let pairs = generate_pairs(&set, 1, 7).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs.iter().filter(|p| p.similarity_label == 1).count(), 2);

        let a = texts(12, "x");
        let b = texts(12, "y");
        let set: Vec<(&str, Label)> =
            a.iter().map(|t| (t.as_str(), I)).chain(b.iter().map(|t| (t.as_str(), R))).collect();
        let pairs = generate_pairs(&set, 20, 7).unwrap();
        let pos = pairs.iter().filter(|p| p.similarity_label == 1).count();
        assert_eq!((pairs.len(), pos), (480, 240));
        let class: BTreeMap<&str, Label> = set.iter().copied().collect();
        for p in &pairs {
            assert_ne!(p.text_a, p.text_b);
            assert_eq!(class[p.text_a] == class[p.text_b], p.similarity_label == 1);
        }
        assert_eq!(pairs, generate_pairs(&set, 20, 7).unwrap());
        assert_ne!(pairs, generate_pairs(&set, 20, 8).unwrap());
    }

    #[test]
    fn pairs_need_two_per_class() {
        let a = texts(6, "x");
        let mut set: Vec<(&str, Label)> = a.iter().map(|t| (t.as_str(), R)).collect();
        set[0].1 = I;
        assert_eq!(generate_pairs(&set, 20, 1), Err(FewShotError::ClassTooSmall { label: I, count: 1 }));
    }

    #[test]
    fn hyperparam_validation() {
        let mut hp = FewShotHyperParams::default();
        assert!(hp.validate().is_ok());
        hp.body_learning_rate = 1e-2;
        assert!(hp.validate().is_err());
        hp.body_learning_rate = 1e-4;
        hp.max_iter = 75;
        assert!(hp.validate().is_err());
        hp.max_iter = 300;
        hp.batch_size = 3;
        assert!(hp.validate().is_err());
    }

    fn family_corpus() -> (Vec<String>, Vec<Label>) {
        let mut t = Vec::new();
        let mut l = Vec::new();
        for i in 0..6 {
            t.push(format!("connection timed out while fetching runner cache shard{} retry", i % 3));
            l.push(I);
            t.push(format!("assertion failed expected value got other in test module{} compile", i % 3));
            l.push(R);
        }
        (t, l)
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let (t, l) = family_corpus();
        let set: Vec<(&str, Label)> = t.iter().map(|s| s.as_str()).zip(l.iter().copied()).collect();
        let pairs = generate_pairs(&set, 2, 1).unwrap();
        let base = HashingProvider::new("fam", 16, 256, 128);
        let hp = FewShotHyperParams { num_epochs: 0, ..Default::default() };
        assert_eq!(fine_tune(&base, &pairs, &hp).unwrap(), base);
    }

    #[test]
    fn fine_tune_separates_families() {
        let (t, l) = family_corpus();
        let set: Vec<(&str, Label)> = t.iter().map(|s| s.as_str()).zip(l.iter().copied()).collect();
        let pairs = generate_pairs(&set, 4, 1).unwrap();
        let base = HashingProvider::new("fam", 16, 256, 128);
        let hp = FewShotHyperParams { body_learning_rate: 1e-3, num_epochs: 1, batch_size: 4, ..Default::default() };
        let before = pair_margin(&base, &pairs).unwrap();
        let tuned = fine_tune(&base, &pairs, &hp).unwrap();
        let after = pair_margin(&tuned, &pairs).unwrap();
        assert!(after >= before);
        assert!(after > 0.0, "margin {after}");
    }

    #[test]
    fn fine_tune_divergence_is_reported() {
        let (t, l) = family_corpus();
        let set: Vec<(&str, Label)> = t.iter().map(|s| s.as_str()).zip(l.iter().copied()).collect();
        let pairs = generate_pairs(&set, 2, 1).unwrap();
        let base = HashingProvider::new("fam", 16, 256, 128);
        let hp = FewShotHyperParams { body_learning_rate: f64::INFINITY, ..Default::default() };
        assert!(matches!(fine_tune(&base, &pairs, &hp), Err(FewShotError::Diverged { .. })));
        assert_eq!(fine_tune(&base, &[], &hp), Err(FewShotError::EmptyPairs));
    }
}
