use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{mccv, mccv_between, rank_sum_test, EvalReport, HarnessError, MccvConfig, MeanStd, Trainer};
use crate::LabeledSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<P> {
    pub shots: usize,
    pub report: EvalReport<P>,
    /// Two-sided rank-sum p-value of this point's F1 scores against the
    /// reference point's; `None` for the reference itself.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport<P> {
    pub reference_shots: usize,
    pub points: Vec<SweepPoint<P>>,
}

/// Runs MCCV once per shot count and compares each F1 distribution with
/// that of the largest shot count.
pub fn shots_sweep<T: Trainer>(
    data: &[LabeledSample],
    cfg: &MccvConfig,
    shots: &[usize],
    trainer: &T,
) -> Result<SweepReport<T::Params>, HarnessError> {
    shots_sweep_with(cfg, shots, |c| mccv(data, c, trainer))
}

/// [`shots_sweep`] with a caller-supplied MCCV runner, e.g. a parallel one.
pub fn shots_sweep_with<P, F>(cfg: &MccvConfig, shots: &[usize], mut run: F) -> Result<SweepReport<P>, HarnessError>
where
    F: FnMut(&MccvConfig) -> Result<EvalReport<P>, HarnessError>,
{
    let reference_shots = *shots
        .iter()
        .max()
        .ok_or_else(|| HarnessError::InvalidConfig("empty shot list".to_string()))?;
    let mut reports = Vec::with_capacity(shots.len());
    for &n in shots {
        reports.push((n, run(&MccvConfig { shots: n, ..cfg.clone() })?));
    }
    finish_sweep(reference_shots, reports)
}

/// Attaches p-values to already computed per-shot reports.
pub fn finish_sweep<P>(reference_shots: usize, reports: Vec<(usize, EvalReport<P>)>) -> Result<SweepReport<P>, HarnessError> {
    let reference = reports
        .iter()
        .find(|(n, _)| *n == reference_shots)
        .map(|(_, r)| r.f1_scores())
        .ok_or_else(|| HarnessError::InvalidConfig("reference shot count missing".to_string()))?;
    let mut points = Vec::with_capacity(reports.len());
    for (shots, report) in reports {
        let p_value = if shots == reference_shots { None } else { Some(rank_sum_test(&report.f1_scores(), &reference)?) };
        points.push(SweepPoint { shots, report, p_value });
    }
    Ok(SweepReport { reference_shots, points })
}

/// Pools F1 scores across projects per shot count before testing against
/// the pooled reference. Shot counts missing from some sweep use the
/// projects that have them.
pub fn pooled_p_values<P>(sweeps: &[SweepReport<P>]) -> Result<Vec<(usize, f64)>, HarnessError> {
    let mut pooled: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut reference_shots = 0;
    for s in sweeps {
        reference_shots = reference_shots.max(s.reference_shots);
        for p in &s.points {
            pooled.entry(p.shots).or_default().extend(p.report.f1_scores());
        }
    }
    let reference = pooled
        .get(&reference_shots)
        .cloned()
        .ok_or_else(|| HarnessError::InvalidConfig("no sweeps to pool".to_string()))?;
    pooled
        .iter()
        .filter(|(n, _)| **n != reference_shots)
        .map(|(n, xs)| Ok((*n, rank_sum_test(xs, &reference)?)))
        .collect()
}

pub struct ProjectData<'a> {
    pub name: String,
    pub samples: &'a [LabeledSample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub f1: MeanStd,
    pub per_repeat_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    /// Project whose validation and test data are predicted.
    pub target: String,
    /// One cell per training project, in [`CrossMatrix::projects`] order.
    pub cells: Vec<Option<CrossCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub projects: Vec<String>,
    pub rows: Vec<CrossRow>,
    pub notices: Vec<String>,
}

/// One-to-one cross-project evaluation.
///
/// Cell `(target, source)` runs MCCV where shots are drawn from `source` and
/// validation/test splits from `target`; both are split with the same
/// per-repeat seed, so the diagonal is the within-project result. A target
/// with no data is skipped with a notice; a source that cannot supply the
/// shots leaves an empty cell with a notice.
pub fn cross_project<T: Trainer>(projects: &[ProjectData<'_>], cfg: &MccvConfig, trainer: &T) -> Result<CrossMatrix, HarnessError> {
    cross_project_with(projects, cfg, |source, target| mccv_between(source, target, cfg, trainer))
}

/// [`cross_project`] with a caller-supplied runner for one
/// `(source, target)` cell.
pub fn cross_project_with<P, F>(projects: &[ProjectData<'_>], cfg: &MccvConfig, mut run: F) -> Result<CrossMatrix, HarnessError>
where
    F: FnMut(&[LabeledSample], &[LabeledSample]) -> Result<EvalReport<P>, HarnessError>,
{
    cfg.validate()?;
    let names: Vec<String> = projects.iter().map(|p| p.name.clone()).collect();
    let mut rows = Vec::new();
    let mut notices = Vec::new();
    for target in projects {
        if target.samples.is_empty() {
            notices.push(alloc::format!("{}: no labeled data, row skipped", target.name));
            continue;
        }
        let mut cells = Vec::with_capacity(projects.len());
        for source in projects {
            if source.samples.is_empty() {
                cells.push(None);
                continue;
            }
            match run(source.samples, target.samples) {
                Ok(r) => cells.push(Some(CrossCell { f1: r.summary.f1, per_repeat_f1: r.f1_scores() })),
                Err(e) => {
                    notices.push(alloc::format!("{} <- {}: {e}", target.name, source.name));
                    cells.push(None);
                }
            }
        }
        if cells.iter().all(Option::is_none) {
            notices.push(alloc::format!("{}: no cell could be computed, row skipped", target.name));
            continue;
        }
        rows.push(CrossRow { target: target.name.clone(), cells });
    }
    Ok(CrossMatrix { projects: names, rows, notices })
}
