use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::{JobRecord, Label};

/// Process features of a job, read off the project's job ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobMetrics {
    pub prior_reruns: u32,
    pub commits_since_last_intermittent: u32,
}

impl JobMetrics {
    pub fn features(&self) -> [f64; 2] {
        [f64::from(self.prior_reruns), f64::from(self.commits_since_last_intermittent)]
    }
}

/// Metrics for every job in `jobs`.
///
/// Jobs are ordered by `(created_at, job_id)`. `prior_reruns` counts earlier
/// runs of the same `(name, commit)`. `commits_since_last_intermittent`
/// counts distinct commits among jobs strictly between the latest preceding
/// failure whose automated label is intermittent and this job, excluding
/// both of their commits. With no such failure it is the number of distinct
/// commits seen so far, this job's included.
pub fn compute_all_job_metrics(jobs: &[JobRecord], auto_labels: &BTreeMap<u64, Label>) -> BTreeMap<u64, JobMetrics> {
    let mut order: Vec<&JobRecord> = jobs.iter().collect();
    order.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.job_id.cmp(&b.job_id)));
    let mut runs: BTreeMap<(&str, &str), u32> = BTreeMap::new();
    let mut all_commits: BTreeSet<&str> = BTreeSet::new();
    let mut last_intermittent: Option<&str> = None;
    let mut since: BTreeSet<&str> = BTreeSet::new();
    let mut out = BTreeMap::new();
    for job in order {
        let commit = job.commit_sha.as_str();
        let reruns = runs.entry((job.name.as_str(), commit)).or_insert(0);
        let prior_reruns = *reruns;
        *reruns += 1;
        all_commits.insert(commit);
        let commits_since = match last_intermittent {
            None => all_commits.len(),
            Some(_) => since.len() - usize::from(since.contains(commit)),
        } as u32;
        out.insert(job.job_id, JobMetrics { prior_reruns, commits_since_last_intermittent: commits_since });

        let intermittent = job.is_failed() && auto_labels.get(&job.job_id).is_some_and(|l| l.is_intermittent());
        if intermittent {
            last_intermittent = Some(commit);
            since.clear();
        } else if last_intermittent.is_some_and(|c| c != commit) {
            since.insert(commit);
        }
    }
    out
}

pub fn compute_job_metrics(
    jobs: &[JobRecord],
    auto_labels: &BTreeMap<u64, Label>,
    job_id: u64,
) -> Result<JobMetrics, BaselineError> {
    compute_all_job_metrics(jobs, auto_labels)
        .remove(&job_id)
        .ok_or(BaselineError::UnknownJob(job_id))
}
