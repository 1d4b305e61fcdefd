//! Repeat-level parallelism. Every repeat derives its own seed, so results
//! do not depend on the thread count.

use flakeshot_core::harness::{
    assemble_report, cross_project_with, run_repeat, shots_sweep_with, CrossMatrix, EvalReport, HarnessError, MccvConfig,
    ProjectData, SweepReport, Trainer,
};
use flakeshot_core::LabeledSample;
use rayon::prelude::*;

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))
}

pub fn mccv_between<T>(
    source: &[LabeledSample],
    target: &[LabeledSample],
    cfg: &MccvConfig,
    trainer: &T,
    jobs: usize,
) -> Result<EvalReport<T::Params>, HarnessError>
where
    T: Trainer + Sync,
    T::Params: Send,
{
    cfg.validate()?;
    if jobs <= 1 {
        return flakeshot_core::harness::mccv_between(source, target, cfg, trainer);
    }
    let outcomes = pool(jobs)?.install(|| {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|i| (i, run_repeat(source, target, cfg, trainer, i)))
            .collect::<Vec<_>>()
    });
    assemble_report(trainer.name(), cfg, outcomes)
}

pub fn mccv<T>(data: &[LabeledSample], cfg: &MccvConfig, trainer: &T, jobs: usize) -> Result<EvalReport<T::Params>, HarnessError>
where
    T: Trainer + Sync,
    T::Params: Send,
{
    mccv_between(data, data, cfg, trainer, jobs)
}

pub fn shots_sweep<T>(
    data: &[LabeledSample],
    cfg: &MccvConfig,
    shots: &[usize],
    trainer: &T,
    jobs: usize,
) -> Result<SweepReport<T::Params>, HarnessError>
where
    T: Trainer + Sync,
    T::Params: Send,
{
    shots_sweep_with(cfg, shots, |c| mccv(data, c, trainer, jobs))
}

pub fn cross_project<T>(projects: &[ProjectData<'_>], cfg: &MccvConfig, trainer: &T, jobs: usize) -> Result<CrossMatrix, HarnessError>
where
    T: Trainer + Sync,
    T::Params: Send,
{
    cross_project_with(projects, cfg, |s, t| mccv_between(s, t, cfg, trainer, jobs))
}
