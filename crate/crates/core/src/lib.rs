//! Multi-objective group-relative advantage estimation.
//!
//! Reward channels are standardized per group, aggregated per generation
//! (mean, softmin, variance-penalized mean, hard minimum, or summed-reward
//! baselines), and whitened across the batch. A tabular softmax trainer and
//! synthetic environments exercise the aggregators end to end.

pub mod aggregation;
pub mod envs;
pub mod error;
pub mod pipeline;
pub mod rewards;
pub mod schedule;
pub mod stats;
pub mod trainer;

pub use aggregation::{
    aggregate, aggregate_explicit, aggregate_group, aggregate_hardmin, aggregate_mean,
    aggregate_softmin, grpo_advantages, grpo_explicit_scalar_advantages, softmin_diagnostics,
    AggregateDiagnostics, AggregationMethod,
};
pub use envs::{EnvKind, EnvSpec};
pub use error::{Result, RvpoError};
pub use pipeline::{compute_advantages, whiten, AdvantageBatch, AdvantageOptions, WhiteningScope};
pub use rewards::{
    group_sum_stats, z_normalize, GroupStats, RewardMatrix, WeightMode, WeightedChannelSpec,
    ZMatrix, DEFAULT_EPSILON,
};
pub use schedule::RiskSchedule;
pub use trainer::{train_run, PolicyTable, RunMetrics, StepMetrics, TrainingConfig};
