//! Automated labeling with the non-deterministic rerun heuristic.
//!
//! Jobs are grouped by `(name, commit_sha)`. A group whose runs contain both a
//! failure and a success is non-deterministic, and every failed run inside it
//! is labeled intermittent ("brown"). All other failures are labeled regular.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baseline::JobMetrics;
use crate::job::{JobRecord, JobStatus, Label};
use crate::seed;

/// z-value used for 95% confidence.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelerError {
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),
    #[error("job {job_id} has no manual label")]
    MissingManualLabel { job_id: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("sample size {size} exceeds population {population}")]
    SampleTooLarge { size: usize, population: usize },
    #[error("stratum {label} has {available} members but quota is {quota}")]
    StratumTooSmall { label: Label, available: usize, quota: usize },
    #[error("class {0} is empty")]
    EmptyClass(Label),
    #[error("overlay rejected: unknown job ids {unknown:?}, duplicate job ids {duplicates:?}")]
    Overlay { unknown: Vec<u64>, duplicates: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMember {
    pub job_id: u64,
    pub status: JobStatus,
    pub created_at: DateTime<Utc>,
}

/// All runs of one job name on one commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerunGroup {
    pub name: String,
    pub commit_sha: String,
    /// Ordered by `created_at`, then `job_id`.
    pub members: Vec<GroupMember>,
    pub is_nondeterministic: bool,
}

impl RerunGroup {
    pub fn is_rerun(&self) -> bool {
        self.members.len() >= 2
    }
}

/// Groups jobs by `(name, commit_sha)`. Groups come out sorted by key.
pub fn build_rerun_groups(jobs: &[JobRecord]) -> Vec<RerunGroup> {
    let mut by_key: BTreeMap<(&str, &str), Vec<GroupMember>> = BTreeMap::new();
    for job in jobs {
        by_key
            .entry((job.name.as_str(), job.commit_sha.as_str()))
            .or_default()
            .push(GroupMember {
                job_id: job.job_id,
                status: job.status,
                created_at: job.created_at,
            });
    }
    by_key
        .into_iter()
        .map(|((name, commit), mut members)| {
            members.sort_by_key(|m| (m.created_at, m.job_id));
            let failed = members.iter().any(|m| m.status == JobStatus::Failed);
            let passed = members.iter().any(|m| m.status == JobStatus::Success);
            RerunGroup {
                name: name.into(),
                commit_sha: commit.into(),
                is_nondeterministic: members.len() >= 2 && failed && passed,
                members,
            }
        })
        .collect()
}

/// Automated label of every failed job, keyed by job id.
pub fn auto_labels(groups: &[RerunGroup]) -> BTreeMap<u64, Label> {
    let mut out = BTreeMap::new();
    for g in groups {
        let label = if g.is_nondeterministic {
            Label::Intermittent
        } else {
            Label::Regular
        };
        for m in g.members.iter().filter(|m| m.status == JobStatus::Failed) {
            out.insert(m.job_id, label);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelProvenance {
    RerunHeuristic,
    ManualOverlay,
}

/// A failed job with its pre-processed log and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub job_id: u64,
    pub project_id: String,
    pub processed_log: String,
    pub raw_log_path: Option<String>,
    pub auto_label: Label,
    pub manual_label: Option<Label>,
    pub label_provenance: LabelProvenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<JobMetrics>,
}

impl LabeledSample {
    /// Manual label when present, automated label otherwise.
    pub fn effective_label(&self) -> Label {
        self.manual_label.unwrap_or(self.auto_label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoLabelOutcome {
    pub samples: Vec<LabeledSample>,
    /// Failed jobs skipped because their log was missing or excluded.
    pub missing_logs: usize,
}

/// Builds labeled samples for every failed job. `load_log` returns the
/// processed log text, or `None` when the log is missing or excluded.
pub fn auto_label<F>(groups: &[RerunGroup], jobs: &[JobRecord], mut load_log: F) -> AutoLabelOutcome
where
    F: FnMut(&JobRecord) -> Option<String>,
{
    let labels = auto_labels(groups);
    let by_id: BTreeMap<u64, &JobRecord> = jobs.iter().map(|j| (j.job_id, j)).collect();
    let mut samples = Vec::new();
    let mut missing_logs = 0;
    for (&job_id, &label) in &labels {
        let Some(job) = by_id.get(&job_id) else {
            missing_logs += 1;
            continue;
        };
        match load_log(job) {
            Some(text) => samples.push(LabeledSample {
                job_id,
                project_id: job.project_id.clone(),
                processed_log: text,
                raw_log_path: job.log_path.clone(),
                auto_label: label,
                manual_label: None,
                label_provenance: LabelProvenance::RerunHeuristic,
                justification: None,
                category: None,
                metrics: None,
            }),
            None => missing_logs += 1,
        }
    }
    AutoLabelOutcome { samples, missing_logs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectStats {
    pub n_failed: usize,
    pub n_brown: usize,
    pub bfr: f64,
    pub error_rate: Option<f64>,
    /// Number of manually labeled samples behind `error_rate`.
    pub n: usize,
}

/// Brown failure ratio: automated-intermittent failures over all failures.
pub fn compute_bfr(samples: &[LabeledSample]) -> Result<f64, LabelerError> {
    if samples.is_empty() {
        return Err(LabelerError::UndefinedStatistic("BFR over zero failed jobs"));
    }
    let brown = samples.iter().filter(|s| s.auto_label.is_intermittent()).count();
    Ok(brown as f64 / samples.len() as f64)
}

/// Labeling error rate: mean absolute disagreement between automated and
/// manual labels.
pub fn error_rate(samples: &[LabeledSample]) -> Result<f64, LabelerError> {
    let pairs = samples
        .iter()
        .map(|s| {
            s.manual_label
                .map(|m| (s.auto_label, m))
                .ok_or(LabelerError::MissingManualLabel { job_id: s.job_id })
        })
        .collect::<Result<Vec<_>, _>>()?;
    error_rate_from_pairs(&pairs)
}

/// Same as [`error_rate`] over `(automated, manual)` label pairs.
pub fn error_rate_from_pairs(pairs: &[(Label, Label)]) -> Result<f64, LabelerError> {
    if pairs.is_empty() {
        return Err(LabelerError::UndefinedStatistic("error rate over zero samples"));
    }
    let mislabeled: u32 = pairs
        .iter()
        .map(|(a, m)| u32::from((i16::from(a.as_u8()) - i16::from(m.as_u8())).unsigned_abs()))
        .sum();
    Ok(f64::from(mislabeled) / pairs.len() as f64)
}

pub fn project_stats(samples: &[LabeledSample]) -> Result<ProjectStats, LabelerError> {
    let bfr = compute_bfr(samples)?;
    let manual: Vec<_> = samples.iter().filter(|s| s.manual_label.is_some()).cloned().collect();
    let error_rate = if manual.is_empty() {
        None
    } else {
        Some(error_rate(&manual)?)
    };
    Ok(ProjectStats {
        n_failed: samples.len(),
        n_brown: samples.iter().filter(|s| s.auto_label.is_intermittent()).count(),
        bfr,
        error_rate,
        n: manual.len(),
    })
}

/// Cochran sample size for a proportion (p = 0.5) with finite population
/// correction.
pub fn sample_size(population: u64, confidence: f64, margin: f64) -> Result<u64, LabelerError> {
    if population == 0 {
        return Err(LabelerError::InvalidParameter("population must be at least 1"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(LabelerError::InvalidParameter("confidence must be in (0, 1)"));
    }
    if !(margin > 0.0) {
        return Err(LabelerError::InvalidParameter("margin must be positive"));
    }
    let z = if (confidence - 0.95).abs() < 1e-12 {
        Z_95
    } else {
        crate::stats::normal_quantile(0.5 + confidence / 2.0)
    };
    let x = z * z * 0.25 / (margin * margin);
    let n = x / (1.0 + (x - 1.0) / population as f64);
    Ok((libm::ceil(n) as u64).min(population))
}

/// `round(total_part * part / total)` with ties rounded up, in exact integer
/// arithmetic.
pub fn proportional_quota(class_count: usize, part: usize, total: usize) -> usize {
    if total == 0 {
        return 0;
    }
    let (c, p, t) = (class_count as u128, part as u128, total as u128);
    ((2 * c * p + t) / (2 * t)) as usize
}

/// Picks `size` indices so the intermittent share of the subset matches the
/// population's (nearest integer, ties up). Returned indices are ascending.
pub fn stratified_indices<T>(
    items: &[T],
    class_of: impl Fn(&T) -> Label,
    size: usize,
    seed: u64,
) -> Result<Vec<usize>, LabelerError> {
    if size > items.len() {
        return Err(LabelerError::SampleTooLarge { size, population: items.len() });
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..items.len()).partition(|&i| class_of(&items[i]).is_intermittent());
    if pos.is_empty() {
        return Err(LabelerError::EmptyClass(Label::Intermittent));
    }
    if neg.is_empty() {
        return Err(LabelerError::EmptyClass(Label::Regular));
    }
    let quota_pos = proportional_quota(pos.len(), size, items.len());
    let quota_neg = size - quota_pos;
    for (label, available, quota) in [
        (Label::Intermittent, pos.len(), quota_pos),
        (Label::Regular, neg.len(), quota_neg),
    ] {
        if quota > available {
            return Err(LabelerError::StratumTooSmall { label, available, quota });
        }
    }
    let mut rng = seed::rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pos[..quota_pos].iter().chain(&neg[..quota_neg]).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Stratified random sample on the automated label.
pub fn stratified_sample(
    samples: &[LabeledSample],
    size: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>, LabelerError> {
    let idx = stratified_indices(samples, |s| s.auto_label, size, seed)?;
    Ok(idx.into_iter().map(|i| samples[i].clone()).collect())
}

/// One row of a manual-label overlay file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub job_id: u64,
    pub manual_label: Label,
    pub justification: String,
    pub category: String,
}

/// Sets manual labels from overlay rows. The overlay wins over the heuristic
/// in both directions.
pub fn apply_manual_overlay(
    mut samples: Vec<LabeledSample>,
    rows: &[OverlayRow],
) -> Result<Vec<LabeledSample>, LabelerError> {
    let known: BTreeMap<u64, usize> = samples.iter().enumerate().map(|(i, s)| (s.job_id, i)).collect();
    let mut seen = BTreeSet::new();
    let mut unknown = Vec::new();
    let mut duplicates = BTreeSet::new();
    for row in rows {
        if !seen.insert(row.job_id) {
            duplicates.insert(row.job_id);
        }
        if !known.contains_key(&row.job_id) {
            unknown.push(row.job_id);
        }
    }
    if !unknown.is_empty() || !duplicates.is_empty() {
        return Err(LabelerError::Overlay {
            unknown,
            duplicates: duplicates.into_iter().collect(),
        });
    }
    for row in rows {
        let s = &mut samples[known[&row.job_id]];
        s.manual_label = Some(row.manual_label);
        s.label_provenance = LabelProvenance::ManualOverlay;
        s.justification = Some(row.justification.clone());
        s.category = (!row.category.is_empty()).then(|| row.category.clone());
    }
    Ok(samples)
}
