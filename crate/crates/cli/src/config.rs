//! Experiment configuration files and method/schedule resolution.
//!
//! A config is a JSON object:
//!
//! ```json
//! {
//!   "env": "bandit",
//!   "method": "rvpo",
//!   "schedule": "0.5->2.0",
//!   "seeds": [0, 1, 2],
//!   "training": { "total_steps": 200, "kl_coefficient": 0.04 },
//!   "weighting": { "mode": "pre" },
//!   "eval_interval": 50,
//!   "key_metric": "min_channel_mean",
//!   "methods": ["gdpo", "rvpo"],
//!   "schedules": ["0", "1.0", "inf"]
//! }
//! ```
//!
//! `env` is a preset name (`bandit`, `tool`, `rubric`) or an inline environment.
//! `methods`/`schedules` are only read by `sweep`.

use std::path::{Path, PathBuf};

use rvpo_core::pipeline::WhiteningScope;
use rvpo_core::trainer::KlDirection;
use rvpo_core::{AggregationMethod, EnvSpec, RiskSchedule, TrainingConfig, WeightedChannelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_EVAL_INTERVAL: usize = 50;
pub const DEFAULT_KEY_METRIC: &str = "min_channel_mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvChoice {
    Preset(String),
    Inline(EnvSpec),
}

impl EnvChoice {
    pub fn resolve(&self) -> CliResult<EnvSpec> {
        let env = match self {
            EnvChoice::Preset(name) => EnvSpec::preset(name).ok_or_else(|| {
                CliError::Validation(format!(
                    "env: unknown preset {name:?} (expected bandit, tool, or rubric)"
                ))
            })?,
            EnvChoice::Inline(spec) => spec.clone(),
        };
        env.validate().map_err(|e| CliError::validation("env", e))?;
        Ok(env)
    }
}

/// Optional overrides of the trainer defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverrides {
    pub group_size: Option<usize>,
    pub prompts_per_step: Option<usize>,
    pub total_steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clip_epsilon: Option<f64>,
    pub kl_coefficient: Option<f64>,
    pub kl_direction: Option<KlDirection>,
    pub inner_epochs: Option<usize>,
    pub epsilon: Option<f64>,
    pub whiten_epsilon: Option<f64>,
    pub whitening: Option<WhiteningScope>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingModeName {
    Pre,
    Post,
    #[default]
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingConfig {
    #[serde(default)]
    pub mode: WeightingModeName,
    /// Defaults to the environment's channel priority weights.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    #[serde(default = "default_method")]
    pub method: String,
    pub schedule: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingOverrides,
    #[serde(default)]
    pub weighting: WeightingConfig,
    pub eval_interval: Option<usize>,
    pub key_metric: Option<String>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default)]
    pub schedules: Vec<String>,
}

fn default_method() -> String {
    "gdpo".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| CliError::validation("config", e))?;
        if cfg.seeds.is_empty() {
            return Err(CliError::Validation("seeds: at least one seed is required".into()));
        }
        Ok(cfg)
    }

    pub fn eval_interval(&self) -> usize {
        self.eval_interval.unwrap_or(DEFAULT_EVAL_INTERVAL).max(1)
    }

    pub fn key_metric(&self) -> &str {
        self.key_metric.as_deref().unwrap_or(DEFAULT_KEY_METRIC)
    }

    /// Trainer configuration for one (method, schedule, seed) cell.
    pub fn training_config(
        &self,
        env: &EnvSpec,
        method: &str,
        schedule: Option<&str>,
        seed: u64,
    ) -> CliResult<TrainingConfig> {
        let base = TrainingConfig::for_env(env);
        let o = &self.training;
        let mut cfg = TrainingConfig {
            group_size: o.group_size.unwrap_or(base.group_size),
            prompts_per_step: o.prompts_per_step.unwrap_or(base.prompts_per_step),
            total_steps: o.total_steps.unwrap_or(base.total_steps),
            learning_rate: o.learning_rate.unwrap_or(base.learning_rate),
            clip_epsilon: o.clip_epsilon.unwrap_or(base.clip_epsilon),
            kl_coefficient: o.kl_coefficient.unwrap_or(base.kl_coefficient),
            kl_direction: o.kl_direction.unwrap_or(base.kl_direction),
            inner_epochs: o.inner_epochs.unwrap_or(base.inner_epochs),
            seed,
            ..base
        };
        cfg.advantage.epsilon = o.epsilon.unwrap_or(cfg.advantage.epsilon);
        cfg.advantage.whiten_epsilon = o.whiten_epsilon.unwrap_or(cfg.advantage.whiten_epsilon);
        cfg.advantage.scope = o.whitening.unwrap_or_default();
        let weights = self
            .weighting
            .weights
            .clone()
            .unwrap_or_else(|| env.weights());
        cfg.weighting = match self.weighting.mode {
            WeightingModeName::None => WeightedChannelSpec::unweighted(),
            WeightingModeName::Pre => WeightedChannelSpec::pre(weights.clone()),
            WeightingModeName::Post => WeightedChannelSpec::post(weights.clone()),
        };
        cfg.method = parse_method(method, schedule, cfg.total_steps, &weights)?;
        cfg.validate(env).map_err(|e| CliError::validation("config", e))?;
        Ok(cfg)
    }

    /// Sweep cells: every method crossed with every schedule, scheduled methods only.
    pub fn sweep_cells(&self) -> Vec<(String, Option<String>)> {
        let methods = if self.methods.is_empty() {
            vec![self.method.clone()]
        } else {
            self.methods.clone()
        };
        let schedules: Vec<String> = if self.schedules.is_empty() {
            self.schedule.iter().cloned().collect()
        } else {
            self.schedules.clone()
        };
        let mut cells = Vec::new();
        for m in methods {
            let (name, inline) = split_method(&m);
            if let Some(s) = inline {
                cells.push((name.to_string(), Some(s.to_string())));
            } else if method_takes_schedule(name) {
                if schedules.is_empty() {
                    cells.push((name.to_string(), None));
                }
                for s in &schedules {
                    cells.push((name.to_string(), Some(s.clone())));
                }
            } else {
                cells.push((name.to_string(), None));
            }
        }
        cells
    }
}

/// Splits `"rvpo k=1e-8"` or `"rvpo-explicit beta=0.5"` into name and inline schedule.
pub fn split_method(text: &str) -> (&str, Option<&str>) {
    let text = text.trim();
    match text.split_once(char::is_whitespace) {
        Some((name, rest)) => {
            let rest = rest.trim();
            let value = rest.split_once('=').map_or(rest, |(_, v)| v.trim());
            (name, Some(value))
        }
        None => (text, None),
    }
}

pub fn method_takes_schedule(name: &str) -> bool {
    matches!(name, "rvpo" | "rvpo-explicit")
}

/// Resolves a method name and optional schedule text.
pub fn parse_method(
    name: &str,
    schedule: Option<&str>,
    total_steps: usize,
    weights: &[f64],
) -> CliResult<AggregationMethod> {
    let need_schedule = || -> CliResult<RiskSchedule> {
        let text = schedule.ok_or_else(|| {
            CliError::Validation(format!("schedule: method {name} needs a k/beta schedule"))
        })?;
        RiskSchedule::parse(text, total_steps).map_err(|e| CliError::validation("schedule", e))
    };
    Ok(match name {
        "grpo" => AggregationMethod::Grpo,
        "gdpo" => AggregationMethod::Gdpo,
        "hardmin" => AggregationMethod::HardMin,
        "grpo-explicit" => AggregationMethod::GrpoExplicitScalar(weights.to_vec()),
        "rvpo" => AggregationMethod::Rvpo(need_schedule()?),
        "rvpo-explicit" => {
            let s = need_schedule()?;
            if let RiskSchedule::Constant(b) = s {
                if b.is_infinite() {
                    return Err(CliError::Validation(
                        "schedule: beta must be finite for rvpo-explicit".into(),
                    ));
                }
            }
            AggregationMethod::RvpoExplicit(s)
        }
        other => {
            return Err(CliError::Validation(format!(
                "method: unknown method {other:?} (expected grpo, gdpo, rvpo, rvpo-explicit, hardmin, grpo-explicit)"
            )))
        }
    })
}

/// File-name-safe schedule label.
pub fn schedule_label(schedule: Option<&str>) -> String {
    match schedule {
        None => "none".into(),
        Some(s) => s
            .trim()
            .replace("->", "to")
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect(),
    }
}

/// The fully resolved description of one run, hashed into its summary.
#[derive(Debug, Clone, Serialize)]
pub struct RunSpec<'a> {
    pub env: &'a EnvSpec,
    pub training: &'a TrainingConfig,
    pub schedule: Option<&'a str>,
    pub eval_interval: usize,
    pub key_metric: &'a str,
}

impl RunSpec<'_> {
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("run spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
