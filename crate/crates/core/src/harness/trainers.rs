use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{random_hp, FitInput, FitOutput, Trainer};
use crate::baseline::{predict_sota, VotingModel};
use crate::fewshot::{train_bundle, EmbeddingProvider, FewShotHyperParams, HpSpace};
use crate::logprep::PrepConfig;
use crate::LabeledSample;

/// Few-shot pipeline: fine-tune a fresh copy of `base` per trial.
#[derive(Debug, Clone)]
pub struct FewShotTrainer<P> {
    pub base: P,
    pub prep_config: PrepConfig,
}

impl<P> FewShotTrainer<P> {
    pub fn new(base: P) -> Self {
        Self { base, prep_config: PrepConfig::default() }
    }
}

impl<P: EmbeddingProvider + Clone> Trainer for FewShotTrainer<P> {
    type Params = FewShotHyperParams;

    fn name(&self) -> &str {
        "fewshot"
    }

    fn sample_params(&self, space: &HpSpace, seed: u64) -> FewShotHyperParams {
        random_hp(space, seed)
    }

    fn fit_predict(&self, input: &FitInput<'_>, params: &FewShotHyperParams) -> Result<FitOutput, String> {
        let bundle = train_bundle(&self.base, input.training, params, &self.prep_config).map_err(|e| e.to_string())?;
        let predict = |set: &[&LabeledSample]| -> Result<Vec<_>, String> {
            set.iter()
                .map(|s| bundle.predict_processed(&s.processed_log).map(|p| p.label).map_err(|e| e.to_string()))
                .collect()
        };
        Ok(FitOutput { validation: predict(input.validation)?, test: predict(input.test)? })
    }
}

/// The comparator, trained beforehand on automatically labeled data. It
/// ignores the shots; the harness only feeds it the shared test splits.
#[derive(Debug, Clone)]
pub struct BaselineTrainer {
    pub model: VotingModel,
    pub training_ids: BTreeSet<u64>,
}

impl Trainer for BaselineTrainer {
    type Params = ();

    fn name(&self) -> &str {
        "baseline"
    }

    fn sample_params(&self, _: &HpSpace, _: u64) {}

    fn fit_predict(&self, input: &FitInput<'_>, _: &()) -> Result<FitOutput, String> {
        let predict = |set: &[&LabeledSample]| -> Result<Vec<_>, String> {
            set.iter()
                .map(|s| {
                    predict_sota(&self.model, &s.processed_log, s.metrics.as_ref())
                        .map(|p| p.label)
                        .map_err(|e| alloc::format!("job {}: {e}", s.job_id))
                })
                .collect()
        };
        Ok(FitOutput { validation: predict(input.validation)?, test: predict(input.test)? })
    }

    fn pretrained_job_ids(&self) -> Option<&BTreeSet<u64>> {
        Some(&self.training_ids)
    }
}
