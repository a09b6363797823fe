//! Batch advantage computation: per-prompt aggregation followed by whitening.

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_group, AggregationMethod};
use crate::error::{Result, RvpoError};
use crate::rewards::{mean_std, standardize, RewardMatrix, WeightedChannelSpec, DEFAULT_EPSILON};

/// Pool used when whitening aggregated advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhiteningScope {
    /// Every generation of every prompt in the batch.
    #[default]
    Global,
    /// Each prompt's group separately.
    PerPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageOptions {
    pub epsilon: f64,
    pub whiten_epsilon: f64,
    pub scope: WhiteningScope,
}

impl Default for AdvantageOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            whiten_epsilon: DEFAULT_EPSILON,
            scope: WhiteningScope::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBatch {
    /// Aggregated advantages before whitening, one vector per prompt.
    pub per_prompt: Vec<Vec<f64>>,
    /// Whitened advantages, prompt-major.
    pub whitened: Vec<f64>,
    /// Mean and population std of the pooled pre-whitening advantages.
    pub batch_mean: f64,
    pub batch_std: f64,
    /// Mean over all generations of the inter-channel score variance.
    pub score_variance_mean: f64,
    /// Resolved `k` or `beta` for the step, when the method has one.
    pub coefficient: Option<f64>,
}

/// `(v - mean) / (std + eps)` with population std; constant input gives zeros.
pub fn whiten(values: &[f64], epsilon: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    standardize(values, epsilon).0
}

pub fn compute_advantages(
    batch: &[RewardMatrix],
    method: &AggregationMethod,
    weighting: &WeightedChannelSpec,
    step: usize,
    options: &AdvantageOptions,
) -> Result<AdvantageBatch> {
    if batch.is_empty() {
        return Err(RvpoError::EmptyBatch);
    }
    let mut per_prompt = Vec::with_capacity(batch.len());
    let mut variance_total = 0.0;
    let mut generations = 0usize;
    for rewards in batch {
        let group = aggregate_group(method, rewards, weighting, step, options.epsilon)?;
        variance_total += group.mean_score_variance() * rewards.groups() as f64;
        generations += rewards.groups();
        per_prompt.push(group.advantages);
    }
    let pooled: Vec<f64> = per_prompt.iter().flatten().copied().collect();
    let (batch_mean, batch_std) = mean_std(&pooled);
    let whitened = match options.scope {
        WhiteningScope::Global => whiten(&pooled, options.whiten_epsilon),
        WhiteningScope::PerPrompt => per_prompt
            .iter()
            .flat_map(|a| whiten(a, options.whiten_epsilon))
            .collect(),
    };
    Ok(AdvantageBatch {
        per_prompt,
        whitened,
        batch_mean,
        batch_std,
        score_variance_mean: variance_total / generations as f64,
        coefficient: method.coefficient_at(step),
    })
}
