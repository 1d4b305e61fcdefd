//! The comparator model: TF-IDF features with chi-squared selection feed a
//! boosted-tree text model; a second boosted model sees job metrics plus the
//! text model's per-feature attributions; a weighted vote combines them.

mod gbdt;
mod metrics;
mod select;
mod tfidf;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gbdt::{fit as fit_gbdt, Gbdt, GbdtParams, Node, Split, Tree};
pub use metrics::{compute_all_job_metrics, compute_job_metrics, JobMetrics};
pub use select::{chi2_scores, select_k_best};
pub use tfidf::{tfidf_fit, tfidf_transform, TfidfModel};

use crate::harness::metrics::metrics as score;
use crate::{seed, Label, LabeledSample};

/// Sparse row: `(column, value)` pairs sorted by column, zeros omitted.
pub type SparseVec = Vec<(usize, f64)>;

pub fn value_at(row: &SparseVec, column: usize) -> f64 {
    match row.binary_search_by_key(&column, |e| e.0) {
        Ok(i) => row[i].1,
        Err(_) => 0.0,
    }
}

pub const ATTRIBUTION_METHOD: &str = "tree-path";
const REFOLD_ATTEMPTS: u64 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("need at least 2 documents, got {0}")]
    TooFewDocuments(usize),
    #[error("k = {k} is outside 1..={columns}")]
    InvalidK { k: usize, columns: usize },
    #[error("row and label counts differ")]
    LengthMismatch,
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("feature {feature} out of range for {n_features} features")]
    FeatureOutOfRange { feature: usize, n_features: usize },
    #[error("job {0} is not in the store")]
    UnknownJob(u64),
    #[error("job metrics missing{}", .0.map(|id| alloc::format!(" for job {id}")).unwrap_or_default())]
    MissingMetrics(Option<u64>),
    #[error("no vocabulary: every training document is empty")]
    EmptyVocabulary,
    #[error("could not form folds with both classes after {0} attempts")]
    DegenerateFolds(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

/// One training example: processed log text, label and job metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SotaSample<'a> {
    pub job_id: u64,
    pub text: &'a str,
    pub label: Label,
    pub metrics: JobMetrics,
}

impl<'a> SotaSample<'a> {
    /// Uses the automated label: the comparator trains on heuristic labels.
    pub fn from_auto_labeled(s: &'a LabeledSample) -> Result<Self, BaselineError> {
        Ok(SotaSample {
            job_id: s.job_id,
            text: &s.processed_log,
            label: s.auto_label,
            metrics: s.metrics.ok_or(BaselineError::MissingMetrics(Some(s.job_id)))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SotaHyperParams {
    pub k: usize,
    pub max_depth: u32,
    pub n_estimators: u32,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub k_grid: Vec<usize>,
    pub max_depth_grid: Vec<u32>,
    pub n_estimators_grid: Vec<u32>,
    pub learning_rate_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Fraction held out to pick the vote weights.
    pub vote_holdout: f64,
    /// Candidate weights for the text model.
    pub vote_grid: Vec<f64>,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            k_grid: alloc::vec![200, 500, 1000, 2000],
            max_depth_grid: alloc::vec![3, 6],
            n_estimators_grid: alloc::vec![100, 300],
            learning_rate_grid: alloc::vec![0.05, 0.1],
            cv_folds: 10,
            vote_holdout: 0.2,
            vote_grid: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |why| Err(BaselineError::InvalidConfig(why));
        if self.k_grid.is_empty() || self.max_depth_grid.is_empty() || self.n_estimators_grid.is_empty() || self.learning_rate_grid.is_empty() {
            return bad("empty hyperparameter grid");
        }
        if self.k_grid.contains(&0) {
            return bad("k must be positive");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if !(self.vote_holdout > 0.0 && self.vote_holdout < 1.0) {
            return bad("vote_holdout must be in (0, 1)");
        }
        if self.vote_grid.is_empty() || self.vote_grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad("vote weights must lie in [0, 1]");
        }
        Ok(())
    }

    fn grid(&self) -> Vec<SotaHyperParams> {
        let mut out = Vec::new();
        for &k in &self.k_grid {
            for &max_depth in &self.max_depth_grid {
                for &n_estimators in &self.n_estimators_grid {
                    for &learning_rate in &self.learning_rate_grid {
                        out.push(SotaHyperParams { k, max_depth, n_estimators, learning_rate });
                    }
                }
            }
        }
        out
    }

    fn gbdt(&self, hp: &SotaHyperParams) -> GbdtParams {
        GbdtParams {
            n_estimators: hp.n_estimators,
            max_depth: hp.max_depth,
            learning_rate: hp.learning_rate,
            lambda: self.lambda,
            min_child_weight: self.min_child_weight,
        }
    }
}

/// Text features restricted to the selected columns, renumbered `0..k`.
fn project(row: &SparseVec, selected: &[usize]) -> SparseVec {
    row.iter()
        .filter_map(|&(j, v)| selected.binary_search(&j).ok().map(|i| (i, v)))
        .collect()
}

fn model2_row(metrics: &JobMetrics, attributions: &SparseVec) -> SparseVec {
    let mut row: SparseVec = metrics.features().into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
    row.extend(attributions.iter().map(|&(j, v)| (j + 2, v)));
    row
}

fn check_classes(labels: impl Iterator<Item = Label>) -> bool {
    let (mut i, mut r) = (false, false);
    for l in labels {
        if l.is_intermittent() {
            i = true;
        } else {
            r = true;
        }
    }
    i && r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotingModel {
    pub tfidf: TfidfModel,
    /// Vocabulary columns kept by chi-squared selection, ascending.
    pub selected: Vec<usize>,
    pub model1: Gbdt,
    pub model2: Gbdt,
    pub w1: f64,
    pub w2: f64,
    pub hyperparams: SotaHyperParams,
    pub attribution_method: String,
    /// Mean cross-validated text-model F1 of the chosen hyperparameters, when
    /// a search took place.
    pub cv_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SotaPrediction {
    pub label: Label,
    pub score: f64,
    pub p1: f64,
    pub p2: f64,
}

pub fn vote(w1: f64, w2: f64, p1: f64, p2: f64) -> f64 {
    (w1 * p1 + w2 * p2).clamp(0.0, 1.0)
}

struct Fitted {
    tfidf: TfidfModel,
    selected: Vec<usize>,
    model1: Gbdt,
    model2: Gbdt,
}

impl Fitted {
    fn probs(&self, text: &str, metrics: &JobMetrics) -> (f64, f64) {
        let row = project(&self.tfidf.transform(text), &self.selected);
        let p1 = self.model1.predict_proba(&row);
        let (_, attr) = self.model1.contributions(&row);
        (p1, self.model2.predict_proba(&model2_row(metrics, &attr)))
    }
}

fn fit_pipeline(samples: &[SotaSample<'_>], hp: &SotaHyperParams, cfg: &BaselineConfig) -> Result<Fitted, BaselineError> {
    let docs: Vec<&str> = samples.iter().map(|s| s.text).collect();
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let tfidf = tfidf_fit(&docs)?;
    if tfidf.n_features() == 0 {
        return Err(BaselineError::EmptyVocabulary);
    }
    let rows: Vec<SparseVec> = docs.iter().map(|d| tfidf.transform(d)).collect();
    let k = hp.k.min(tfidf.n_features());
    let selected = select_k_best(&rows, tfidf.n_features(), &labels, k)?;
    let rows: Vec<SparseVec> = rows.iter().map(|r| project(r, &selected)).collect();
    let params = cfg.gbdt(hp);
    let model1 = fit_gbdt(&rows, &labels, k, &params)?;
    let rows2: Vec<SparseVec> = rows
        .iter()
        .zip(samples)
        .map(|(r, s)| model2_row(&s.metrics, &model1.contributions(r).1))
        .collect();
    let model2 = fit_gbdt(&rows2, &labels, k + 2, &params)?;
    Ok(Fitted { tfidf, selected, model1, model2 })
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut assignment = alloc::vec![0; labels.len()];
    let mut offset = 0;
    for class in [Label::Intermittent, Label::Regular] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = (pos + offset) % folds;
        }
        offset += 1;
    }
    assignment
}

/// Mean held-out text-model F1 of every grid point under k-fold CV.
fn cross_validate(samples: &[SotaSample<'_>], cfg: &BaselineConfig, seed: u64) -> Result<Vec<(SotaHyperParams, f64)>, BaselineError> {
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let folds = cfg.cv_folds.min(samples.len());
    let mut attempt = 0;
    let assignment = loop {
        if attempt == REFOLD_ATTEMPTS {
            return Err(BaselineError::DegenerateFolds(REFOLD_ATTEMPTS));
        }
        let a = stratified_folds(&labels, folds, seed::derive(seed, &[0xCF, attempt]));
        let ok = (0..folds).all(|f| check_classes(labels.iter().zip(&a).filter(|(_, x)| **x != f).map(|(l, _)| *l)));
        if ok {
            break a;
        }
        attempt += 1;
    };
    let grid = cfg.grid();
    let mut sums = alloc::vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..samples.len()).filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = (0..samples.len()).filter(|&i| assignment[i] == f).collect();
        let docs: Vec<&str> = train.iter().map(|&i| samples[i].text).collect();
        let tl: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
        let tfidf = tfidf_fit(&docs)?;
        if tfidf.n_features() == 0 {
            return Err(BaselineError::EmptyVocabulary);
        }
        let rows: Vec<SparseVec> = docs.iter().map(|d| tfidf.transform(d)).collect();
        let test_rows: Vec<SparseVec> = test.iter().map(|&i| tfidf.transform(samples[i].text)).collect();
        let truth: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
        // Tree ensembles with fewer estimators are prefixes of larger ones, so
        // fit once per (k, depth, rate) with the most estimators.
        let mut fitted: BTreeMap<(usize, u32, u64), (Vec<usize>, Gbdt)> = BTreeMap::new();
        for (g, hp) in grid.iter().enumerate() {
            let k = hp.k.min(tfidf.n_features());
            let key = (k, hp.max_depth, hp.learning_rate.to_bits());
            if !fitted.contains_key(&key) {
                let selected = select_k_best(&rows, tfidf.n_features(), &tl, k)?;
                let projected: Vec<SparseVec> = rows.iter().map(|r| project(r, &selected)).collect();
                let most = cfg.n_estimators_grid.iter().copied().max().unwrap_or(hp.n_estimators);
                let model = fit_gbdt(&projected, &tl, k, &cfg.gbdt(&SotaHyperParams { n_estimators: most, ..*hp }))?;
                fitted.insert(key, (selected, model));
            }
            let (selected, model) = &fitted[&key];
            let prefix = Gbdt {
                base_score: model.base_score,
                n_features: model.n_features,
                trees: model.trees[..hp.n_estimators as usize].to_vec(),
            };
            let preds: Vec<Label> = test_rows
                .iter()
                .map(|r| crate::fewshot::label_for(prefix.predict_proba(&project(r, selected))))
                .collect();
            sums[g] += score(&preds, &truth).map_err(|_| BaselineError::LengthMismatch)?.f1();
        }
    }
    Ok(grid.into_iter().zip(sums).map(|(hp, s)| (hp, s / folds as f64)).collect())
}

/// Stratified holdout indices: about `fraction` of each class, at least one
/// per class, never the whole class.
fn holdout(labels: &[Label], fraction: f64, seed: u64) -> Option<Vec<bool>> {
    let mut rng = seed::rng(seed);
    let mut mask = alloc::vec![false; labels.len()];
    for class in [Label::Intermittent, Label::Regular] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return None;
        }
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64 * fraction + 0.5) as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..take] {
            mask[i] = true;
        }
    }
    Some(mask)
}

/// Trains the comparator.
///
/// Hyperparameters come from k-fold CV of the text model over the grid
/// (skipped for a one-point grid; the first best point wins). The vote
/// weight of the text model is the grid value maximising intermittent F1 on
/// a stratified holdout, preferring the larger weight on ties. The final
/// models are refit on all samples.
pub fn train_sota(samples: &[SotaSample<'_>], cfg: &BaselineConfig, seed: u64) -> Result<VotingModel, BaselineError> {
    cfg.validate()?;
    if !check_classes(samples.iter().map(|s| s.label)) {
        return Err(BaselineError::SingleClass);
    }
    let grid = cfg.grid();
    let (hyperparams, cv_f1) = if grid.len() == 1 {
        (grid[0], None)
    } else {
        let scored = cross_validate(samples, cfg, seed::derive(seed, &[1]))?;
        let mut best = scored[0];
        for s in &scored[1..] {
            if s.1 > best.1 {
                best = *s;
            }
        }
        (best.0, Some(best.1))
    };

    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let mask = holdout(&labels, cfg.vote_holdout, seed::derive(seed, &[2])).ok_or(BaselineError::DegenerateFolds(1))?;
    let fit_part: Vec<SotaSample<'_>> = samples.iter().zip(&mask).filter(|(_, m)| !**m).map(|(s, _)| *s).collect();
    let probe: Vec<&SotaSample<'_>> = samples.iter().zip(&mask).filter(|(_, m)| **m).map(|(s, _)| s).collect();
    let partial = fit_pipeline(&fit_part, &hyperparams, cfg)?;
    let probs: Vec<(f64, f64)> = probe.iter().map(|s| partial.probs(s.text, &s.metrics)).collect();
    let truth: Vec<Label> = probe.iter().map(|s| s.label).collect();
    let mut weights = cfg.vote_grid.clone();
    weights.sort_by(|a, b| b.total_cmp(a));
    let mut w1 = weights[0];
    let mut best_f1 = f64::NEG_INFINITY;
    for &w in &weights {
        let preds: Vec<Label> = probs.iter().map(|&(p1, p2)| crate::fewshot::label_for(vote(w, 1.0 - w, p1, p2))).collect();
        let f1 = score(&preds, &truth).map_err(|_| BaselineError::LengthMismatch)?.f1();
        if f1 > best_f1 {
            best_f1 = f1;
            w1 = w;
        }
    }

    let full = fit_pipeline(samples, &hyperparams, cfg)?;
    Ok(VotingModel {
        tfidf: full.tfidf,
        selected: full.selected,
        model1: full.model1,
        model2: full.model2,
        w1,
        w2: 1.0 - w1,
        hyperparams,
        attribution_method: ATTRIBUTION_METHOD.to_string(),
        cv_f1,
    })
}

impl VotingModel {
    /// Text-model features of a processed log.
    pub fn text_row(&self, processed_log: &str) -> SparseVec {
        project(&self.tfidf.transform(processed_log), &self.selected)
    }

    pub fn model2_row(&self, text_row: &SparseVec, metrics: &JobMetrics) -> SparseVec {
        model2_row(metrics, &self.model1.contributions(text_row).1)
    }
}

/// Scores a processed log. Metrics are mandatory for this model.
pub fn predict_sota(model: &VotingModel, processed_log: &str, metrics: Option<&JobMetrics>) -> Result<SotaPrediction, BaselineError> {
    let metrics = metrics.ok_or(BaselineError::MissingMetrics(None))?;
    let row = model.text_row(processed_log);
    let p1 = model.model1.predict_proba(&row);
    let p2 = model.model2.predict_proba(&model.model2_row(&row, metrics));
    let score = vote(model.w1, model.w2, p1, p2);
    Ok(SotaPrediction { label: crate::fewshot::label_for(score), score, p1, p2 })
}
