//! Monte Carlo cross-validation with nested random-search HPO, shot sweeps,
//! cross-project evaluation and report rendering.
//!
//! Every random draw comes from a seed derived from the master seed and the
//! repeat / trial indices, so repeats can run in any order or in parallel.

pub mod metrics;
mod ranksum;
pub mod report;
mod sweep;
mod trainers;

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Debug;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use metrics::{harmonic_f1, metrics, ClassMetrics, Confusion, Metrics, MetricsError};
pub use ranksum::{rank_sum_test, rank_sum_test_with, u_distribution, RankSumError, RankSumMethod, EXACT_MAX_TOTAL};
pub use sweep::{
    cross_project, cross_project_with, finish_sweep, pooled_p_values, shots_sweep, shots_sweep_with, CrossCell, CrossMatrix,
    CrossRow, ProjectData, SweepPoint, SweepReport,
};
pub use trainers::{BaselineTrainer, FewShotTrainer};

use crate::fewshot::{FewShotHyperParams, HpSpace};
use crate::labeler::proportional_quota;
use crate::{seed, stats, Label, LabeledSample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{split} split cannot hold 2 {class} samples (quota {quota})")]
    InfeasibleSplit { split: &'static str, class: Label, quota: usize },
    #[error("only {available} {class} samples available for {requested} shots")]
    NotEnoughShots { class: Label, available: usize, requested: usize },
    #[error("test job {0} is part of the trainer's training data")]
    Contamination(u64),
    #[error("repeat(s) failed: {}", format_failures(.0))]
    RepeatsFailed(Vec<RepeatFailure>),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    RankSum(#[from] RankSumError),
}

fn format_failures(f: &[RepeatFailure]) -> String {
    f.iter()
        .map(|r| alloc::format!("#{}: {}", r.repeat, r.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFailure {
    pub repeat: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub learn: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { learn: 0.25, validation: 0.25, test: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MccvConfig {
    pub repeats: u32,
    pub trials: u32,
    pub shots: usize,
    pub ratios: SplitRatios,
    pub master_seed: u64,
    pub hp_space: HpSpace,
}

impl Default for MccvConfig {
    fn default() -> Self {
        Self {
            repeats: 100,
            trials: 5,
            shots: 12,
            ratios: SplitRatios::default(),
            master_seed: 0,
            hp_space: HpSpace::default(),
        }
    }
}

impl MccvConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |why: &str| Err(HarnessError::InvalidConfig(why.to_string()));
        if self.repeats == 0 || self.trials == 0 || self.shots == 0 {
            return bad("repeats, trials and shots must be at least 1");
        }
        let r = self.ratios;
        if [r.learn, r.validation, r.test].iter().any(|v| !(*v > 0.0)) {
            return bad("split ratios must be positive");
        }
        if libm::fabs(r.learn + r.validation + r.test - 1.0) > 1e-9 {
            return bad("split ratios must sum to 1");
        }
        self.hp_space.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }
}

/// Index sets over a dataset; `training` is filled by [`sample_shots`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub learn: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub training: Vec<usize>,
}

/// Split sizes: learn gets `ceil`, validation `floor`, test the rest.
pub fn split_sizes(n: usize, ratios: &SplitRatios) -> (usize, usize, usize) {
    let learn = (libm::ceil(ratios.learn * n as f64 - 1e-9) as usize).min(n);
    let validation = (libm::floor(ratios.validation * n as f64 + 1e-9) as usize).min(n - learn);
    (learn, validation, n - learn - validation)
}

/// Stratified learn / validation / test split.
///
/// Each split's intermittent count is its proportional share of the
/// intermittent class, rounded to nearest with ties up; the test split takes
/// whatever remains. Every split must end up with at least two samples of
/// each class. Index lists are ascending.
pub fn stratified_split(labels: &[Label], ratios: &SplitRatios, seed: u64) -> Result<DatasetSplits, HarnessError> {
    let n = labels.len();
    let (nl, nv, nt) = split_sizes(n, ratios);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i].is_intermittent());
    let il = proportional_quota(pos.len(), nl, n);
    let iv = proportional_quota(pos.len(), nv, n);
    let it = pos.len().saturating_sub(il + iv);
    for (split, size, quota) in [("learn", nl, il), ("validation", nv, iv), ("test", nt, it)] {
        if quota < 2 || il + iv > pos.len() {
            return Err(HarnessError::InfeasibleSplit { split, class: Label::Intermittent, quota });
        }
        let regular = size.saturating_sub(quota);
        if regular < 2 || quota > size {
            return Err(HarnessError::InfeasibleSplit { split, class: Label::Regular, quota: regular });
        }
    }
    let mut rng = seed::rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let (rl, rv) = (nl - il, nv - iv);
    let take = |p: core::ops::Range<usize>, r: core::ops::Range<usize>| {
        let mut v: Vec<usize> = pos[p].iter().chain(&neg[r]).copied().collect();
        v.sort_unstable();
        v
    };
    let learn = take(0..il, 0..rl);
    let validation = take(il..il + iv, rl..rl + rv);
    let test = take(il + iv..pos.len(), rl + rv..neg.len());
    Ok(DatasetSplits { learn, validation, test, training: Vec::new() })
}

/// Draws exactly `shots` members of each class from `pool` (indices into
/// `labels`), uniformly without replacement. Result is ascending.
pub fn sample_shots(pool: &[usize], labels: &[Label], shots: usize, seed: u64) -> Result<Vec<usize>, HarnessError> {
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(2 * shots);
    for class in [Label::Intermittent, Label::Regular] {
        let mut members: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == class).collect();
        if members.len() < shots {
            return Err(HarnessError::NotEnoughShots { class, available: members.len(), requested: shots });
        }
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..shots]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Log-uniform learning rate, uniform categorical fields.
pub fn random_hp(space: &HpSpace, seed: u64) -> FewShotHyperParams {
    let mut rng = seed::rng(seed);
    let (lo, hi) = (libm::log(space.learning_rate_min), libm::log(space.learning_rate_max));
    let lr = if hi > lo { libm::exp(rng.random_range(lo..hi)) } else { space.learning_rate_min };
    let mut pick = |v: &[u32]| v[rng.random_range(0..v.len())];
    let num_epochs = pick(&space.num_epochs);
    let batch_size = pick(&space.batch_size);
    let max_iter = pick(&space.max_iter);
    FewShotHyperParams {
        body_learning_rate: lr.clamp(space.learning_rate_min, space.learning_rate_max),
        num_epochs,
        batch_size,
        max_iter,
        pair_multiplier: space.pair_multiplier,
        seed,
    }
}

/// What a trainer sees for one HPO trial.
pub struct FitInput<'a> {
    pub training: &'a [&'a LabeledSample],
    pub validation: &'a [&'a LabeledSample],
    pub test: &'a [&'a LabeledSample],
    pub seed: u64,
}

pub struct FitOutput {
    pub validation: Vec<Label>,
    pub test: Vec<Label>,
}

/// A model family evaluated by the harness.
pub trait Trainer {
    type Params: Clone + Debug + PartialEq + Serialize + DeserializeOwned;

    fn name(&self) -> &str;

    fn sample_params(&self, space: &HpSpace, seed: u64) -> Self::Params;

    /// Fits on `input.training` and predicts the validation and test sets.
    fn fit_predict(&self, input: &FitInput<'_>, params: &Self::Params) -> Result<FitOutput, String>;

    /// Job ids the trainer learned from before the harness ran, if any. Test
    /// samples must not be among them.
    fn pretrained_job_ids(&self) -> Option<&BTreeSet<u64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatResult<P> {
    pub repeat: u32,
    pub seed: u64,
    pub hp: P,
    pub f1: f64,
    pub precision_intermittent: f64,
    pub recall_intermittent: f64,
    pub precision_regular: f64,
    pub recall_regular: f64,
    pub confusion: Confusion,
    /// Some metric had a zero denominator and was reported as 0.
    pub undefined: bool,
    pub validation_f1: f64,
    pub trial_validation_f1: Vec<f64>,
    pub training_job_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        MeanStd { mean: stats::mean(xs).unwrap_or(0.0), std: stats::std_dev(xs).unwrap_or(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSummary {
    pub f1: MeanStd,
    pub precision_intermittent: MeanStd,
    pub recall_intermittent: MeanStd,
    pub precision_regular: MeanStd,
    pub recall_regular: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport<P> {
    pub trainer: String,
    pub config: MccvConfig,
    pub per_repeat: Vec<RepeatResult<P>>,
    pub mean_f1: f64,
    /// Sample standard deviation (n - 1).
    pub std_f1: f64,
    pub summary: MetricSummary,
}

impl<P> EvalReport<P> {
    pub fn f1_scores(&self) -> Vec<f64> {
        self.per_repeat.iter().map(|r| r.f1).collect()
    }
}

fn refs<'a>(data: &'a [LabeledSample], idx: &[usize]) -> Vec<&'a LabeledSample> {
    idx.iter().map(|&i| &data[i]).collect()
}

fn effective(data: &[LabeledSample]) -> Vec<Label> {
    data.iter().map(LabeledSample::effective_label).collect()
}

/// One MCCV repeat: split, draw shots, run the HPO trials, keep the first
/// trial with the best validation F1 and score it on the test split.
///
/// Shots come from `source`; validation and test come from `target`. Pass
/// the same dataset twice for within-project evaluation.
pub fn run_repeat<T: Trainer>(
    source: &[LabeledSample],
    target: &[LabeledSample],
    cfg: &MccvConfig,
    trainer: &T,
    repeat: u32,
) -> Result<RepeatResult<T::Params>, HarnessError> {
    let seed_i = seed::derive(cfg.master_seed, &[u64::from(repeat)]);
    let split_seed = seed::derive(seed_i, &[0]);
    let target_labels = effective(target);
    let t_split = stratified_split(&target_labels, &cfg.ratios, split_seed)?;
    let source_labels = effective(source);
    let s_split = stratified_split(&source_labels, &cfg.ratios, split_seed)?;
    let training = sample_shots(&s_split.learn, &source_labels, cfg.shots, seed::derive(seed_i, &[1]))?;

    let training = refs(source, &training);
    let validation = refs(target, &t_split.validation);
    let test = refs(target, &t_split.test);
    if let Some(ids) = trainer.pretrained_job_ids() {
        if let Some(s) = test.iter().find(|s| ids.contains(&s.job_id)) {
            return Err(HarnessError::Contamination(s.job_id));
        }
    }
    let v_truth: Vec<Label> = validation.iter().map(|s| s.effective_label()).collect();
    let t_truth: Vec<Label> = test.iter().map(|s| s.effective_label()).collect();

    let mut best: Option<(f64, T::Params, Metrics)> = None;
    let mut trial_scores = Vec::with_capacity(cfg.trials as usize);
    for j in 0..cfg.trials {
        let trial_seed = seed::derive(cfg.master_seed, &[u64::from(repeat), u64::from(j)]);
        let params = trainer.sample_params(&cfg.hp_space, trial_seed);
        let input = FitInput { training: &training, validation: &validation, test: &test, seed: trial_seed };
        let out = trainer.fit_predict(&input, &params).map_err(HarnessError::Training)?;
        let v = metrics(&out.validation, &v_truth).map_err(|e| HarnessError::Training(e.to_string()))?;
        trial_scores.push(v.f1());
        if best.as_ref().is_none_or(|b| v.f1() > b.0) {
            let t = metrics(&out.test, &t_truth).map_err(|e| HarnessError::Training(e.to_string()))?;
            best = Some((v.f1(), params, t));
        }
    }
    let (validation_f1, hp, m) = best.expect("at least one trial");
    Ok(RepeatResult {
        repeat,
        seed: seed_i,
        hp,
        f1: m.f1(),
        precision_intermittent: m.intermittent.precision,
        recall_intermittent: m.intermittent.recall,
        precision_regular: m.regular.precision,
        recall_regular: m.regular.recall,
        confusion: m.confusion,
        undefined: m.intermittent.undefined || m.regular.undefined,
        validation_f1,
        trial_validation_f1: trial_scores,
        training_job_ids: training.iter().map(|s| s.job_id).collect(),
    })
}

/// Folds per-repeat outcomes into a report. Fails listing every failed
/// repeat; results may arrive in any order.
pub fn assemble_report<P>(
    trainer: &str,
    cfg: &MccvConfig,
    outcomes: Vec<(u32, Result<RepeatResult<P>, HarnessError>)>,
) -> Result<EvalReport<P>, HarnessError> {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in outcomes {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => failures.push(RepeatFailure { repeat: i, reason: e.to_string() }),
        }
    }
    if !failures.is_empty() {
        failures.sort_by_key(|f| f.repeat);
        return Err(HarnessError::RepeatsFailed(failures));
    }
    ok.sort_by_key(|r| r.repeat);
    let col = |f: fn(&RepeatResult<P>) -> f64| MeanStd::of(&ok.iter().map(f).collect::<Vec<_>>());
    let summary = MetricSummary {
        f1: col(|r| r.f1),
        precision_intermittent: col(|r| r.precision_intermittent),
        recall_intermittent: col(|r| r.recall_intermittent),
        precision_regular: col(|r| r.precision_regular),
        recall_regular: col(|r| r.recall_regular),
    };
    Ok(EvalReport {
        trainer: trainer.to_string(),
        config: cfg.clone(),
        per_repeat: ok,
        mean_f1: summary.f1.mean,
        std_f1: summary.f1.std,
        summary,
    })
}

/// MCCV where shots come from `source` and validation/test from `target`.
pub fn mccv_between<T: Trainer>(
    source: &[LabeledSample],
    target: &[LabeledSample],
    cfg: &MccvConfig,
    trainer: &T,
) -> Result<EvalReport<T::Params>, HarnessError> {
    cfg.validate()?;
    let outcomes = (0..cfg.repeats).map(|i| (i, run_repeat(source, target, cfg, trainer, i))).collect();
    assemble_report(trainer.name(), cfg, outcomes)
}

/// Sequential MCCV over one dataset, labelled by effective labels.
pub fn mccv<T: Trainer>(data: &[LabeledSample], cfg: &MccvConfig, trainer: &T) -> Result<EvalReport<T::Params>, HarnessError> {
    mccv_between(data, data, cfg, trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Intermittent as I, Regular as R};

    fn labels(n: usize, pos: usize) -> Vec<Label> {
        (0..n).map(|i| if i < pos { I } else { R }).collect()
    }

    #[test]
    fn split_sizes_for_odd_counts() {
        assert_eq!(split_sizes(366, &SplitRatios::default()), (92, 91, 183));
        assert_eq!(split_sizes(100, &SplitRatios::default()), (25, 25, 50));
        assert_eq!(split_sizes(331, &SplitRatios::default()), (83, 82, 166));
    }

    #[test]
    fn forced_quotas() {
        let l = labels(100, 20);
        let s = stratified_split(&l, &SplitRatios::default(), 3).unwrap();
        assert_eq!(s.test.len(), 50);
        assert_eq!(s.test.iter().filter(|&&i| l[i] == I).count(), 10);
        assert_eq!(s.learn.iter().filter(|&&i| l[i] == I).count(), 5);
        assert_eq!(s, stratified_split(&l, &SplitRatios::default(), 3).unwrap());
        assert_ne!(s, stratified_split(&l, &SplitRatios::default(), 4).unwrap());
    }

    #[test]
    fn starving_split_is_named() {
        let l = labels(40, 5);
        match stratified_split(&l, &SplitRatios::default(), 0) {
            Err(HarnessError::InfeasibleSplit { split, class: I, .. }) => assert_eq!(split, "learn"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shots() {
        let l = labels(92, 35);
        let pool: Vec<usize> = (0..92).collect();
        let tr = sample_shots(&pool, &l, 12, 1).unwrap();
        assert_eq!(tr.len(), 24);
        assert_eq!(tr.iter().filter(|&&i| l[i] == I).count(), 12);
        let one = sample_shots(&pool, &l, 1, 1).unwrap();
        assert_eq!(one.len(), 2);
        let all = sample_shots(&pool, &l, 35, 1).unwrap();
        assert_eq!(all.iter().filter(|&&i| l[i] == I).count(), 35);
        assert!(matches!(sample_shots(&pool, &l, 36, 1), Err(HarnessError::NotEnoughShots { class: I, .. })));
    }

    #[test]
    fn hp_draws_in_domain() {
        let space = HpSpace::default();
        let mut below = 0;
        for s in 0..10_000u64 {
            let hp = random_hp(&space, s);
            assert!(space.check(&hp).is_ok(), "{hp:?}");
            if hp.body_learning_rate < 3.16e-5 {
                below += 1;
            }
        }
        // geometric midpoint of [1e-6, 1e-3] is 3.162e-5
        assert!((4800..=5200).contains(&below), "{below}");
        assert_eq!(random_hp(&space, 5), random_hp(&space, 5));
    }

    #[test]
    fn config_validation() {
        let mut c = MccvConfig::default();
        assert!(c.validate().is_ok());
        c.ratios.test = 0.6;
        assert!(c.validate().is_err());
        let c = MccvConfig { repeats: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
