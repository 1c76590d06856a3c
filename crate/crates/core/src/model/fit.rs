use serde::{Deserialize, Serialize};

use super::{ModelConfig, Posterior};
use crate::error::{Error, Result};
use crate::features::ObservationRecord;
use crate::sampler::{hmc_sample, uniform_init, PosteriorDraws, SamplerConfig};

/// Largest in-sample distance; the fitted scale and skewness forms are not
/// trusted beyond it.
pub fn observed_distance_cap(records: &[ObservationRecord]) -> Option<usize> {
    records.iter().map(ObservationRecord::distance).max()
}

/// Model settings that travel with a set of posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub records: usize,
    pub divergent: usize,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: ModelConfig,
    pub draws: PosteriorDraws,
}

impl FitOutput {
    pub fn summary(&self, sampler: &SamplerConfig, records: usize) -> FitSummary {
        FitSummary {
            model: self.model.clone(),
            sampler: sampler.clone(),
            records,
            divergent: self.draws.total_divergent(),
            max_rhat: self.draws.max_rhat(),
            min_ess: self.draws.min_ess(),
            step_sizes: self.draws.step_sizes.clone(),
        }
    }
}

/// Samples the posterior of `model` given `records`. A missing distance cap
/// is set to the largest observed distance.
pub fn fit(records: &[ObservationRecord], mut model: ModelConfig, sampler: &SamplerConfig) -> Result<FitOutput> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records to fit".into()));
    }
    if model.distance_cap.is_none() {
        model.distance_cap = observed_distance_cap(records);
    }
    let post = Posterior::new(model.clone(), records)?;
    let layout = *post.layout();
    let chains = hmc_sample(&post.evaluator(), sampler, uniform_init(post.dim()))?;
    let draws = PosteriorDraws::from_chains(layout.names(), &chains, |x| layout.values(&layout.constrain(x)))?;
    Ok(FitOutput { model, draws })
}
