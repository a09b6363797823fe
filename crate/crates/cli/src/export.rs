//! Per-run CSV series and summary JSON.

use std::collections::BTreeMap;
use std::path::Path;

use rvpo_core::envs::ChannelKind;
use rvpo_core::{EnvSpec, RunMetrics, StepMetrics};
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::format::{json_num, num};

/// Column order of a run CSV for `env`.
pub fn csv_header(env: &EnvSpec) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "k_or_beta".to_string()];
    for ch in &env.channels {
        cols.push(format!("channel_{}_mean", ch.name));
        if ch.kind == ChannelKind::Binary {
            cols.push(format!("channel_{}_satisfaction", ch.name));
        }
        cols.push(format!("channel_{}_expected", ch.name));
    }
    for c in ["z_variance_mean", "adv_mean", "adv_std", "kl_to_ref", "loss"] {
        cols.push(c.to_string());
    }
    for ctx in 0..env.context_count {
        for a in &env.actions {
            cols.push(format!("prob_{ctx}_{}", a.name));
        }
    }
    cols
}

/// One CSV row; `None` cells are written empty.
pub fn csv_row(env: &EnvSpec, m: &StepMetrics) -> Vec<Option<f64>> {
    let mut row = vec![Some(m.step as f64), m.coefficient];
    for (j, ch) in env.channels.iter().enumerate() {
        row.push(Some(m.channel_means[j]));
        if ch.kind == ChannelKind::Binary {
            row.push(m.channel_satisfaction[j]);
        }
        row.push(Some(m.expected_channel[j]));
    }
    row.extend(
        [
            m.score_variance_mean,
            m.advantage_mean,
            m.advantage_std,
            m.kl_to_reference,
            m.loss,
        ]
        .map(Some),
    );
    row.extend(m.probs.iter().flatten().map(|&p| Some(p)));
    row
}

fn cell(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_run_csv(path: &Path, env: &EnvSpec, run: &RunMetrics) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(env))?;
    for m in &run.steps {
        w.write_record(csv_row(env, m).into_iter().map(cell))?;
    }
    w.flush()?;
    Ok(())
}

/// Named metrics of one step, as exported.
pub fn step_metrics_map(env: &EnvSpec, m: &StepMetrics) -> BTreeMap<String, f64> {
    let mut map: BTreeMap<String, f64> = csv_header(env)
        .into_iter()
        .zip(csv_row(env, m))
        .filter(|(k, _)| k != "step")
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
    let finite_min = |vals: &mut dyn Iterator<Item = f64>| {
        vals.filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min)
    };
    map.insert(
        "min_channel_mean".into(),
        finite_min(&mut m.channel_means.iter().copied()),
    );
    map.insert(
        "min_channel_expected".into(),
        finite_min(&mut m.expected_channel.iter().copied()),
    );
    map
}

/// Names accepted as a key metric.
pub fn metric_names(env: &EnvSpec) -> Vec<String> {
    let mut names = csv_header(env);
    names.retain(|n| n != "step");
    names.push("min_channel_mean".into());
    names.push("min_channel_expected".into());
    names
}

pub fn check_key_metric(env: &EnvSpec, key: &str) -> CliResult<()> {
    let names = metric_names(env);
    if names.iter().any(|n| n == key) {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "key_metric: unknown metric {key:?}; available: {}",
            names.join(", ")
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub step: usize,
    pub value: Value,
    pub metrics: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub env: String,
    pub method: String,
    pub schedule: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    pub steps: usize,
    pub status: String,
    pub failure: Option<String>,
    pub key_metric: String,
    pub eval_interval: usize,
    pub best: Option<Checkpoint>,
    #[serde(rename = "final")]
    pub last: Option<Checkpoint>,
}

pub struct SummaryInput<'a> {
    pub env: &'a EnvSpec,
    pub method: &'a str,
    pub schedule: Option<&'a str>,
    pub seed: u64,
    pub config_hash: String,
    pub key_metric: &'a str,
    pub eval_interval: usize,
}

fn checkpoint(env: &EnvSpec, m: &StepMetrics, key: &str) -> (f64, Checkpoint) {
    let metrics = step_metrics_map(env, m);
    let value = metrics.get(key).copied().unwrap_or(f64::NAN);
    let cp = Checkpoint {
        step: m.step,
        value: json_num(value),
        metrics: metrics.into_iter().map(|(k, v)| (k, json_num(v))).collect(),
    };
    (value, cp)
}

/// Final step plus the best step among evaluation points (every `eval_interval`
/// steps and the final step); ties keep the earliest step.
pub fn summarize(input: SummaryInput<'_>, run: &RunMetrics) -> RunSummary {
    let interval = input.eval_interval.max(1);
    let last_index = run.steps.len().checked_sub(1);
    let mut best: Option<(f64, Checkpoint)> = None;
    for (i, m) in run.steps.iter().enumerate() {
        if (m.step + 1) % interval != 0 && Some(i) != last_index {
            continue;
        }
        let (v, cp) = checkpoint(input.env, m, input.key_metric);
        let better = match &best {
            None => true,
            Some((bv, _)) => v > *bv || (bv.is_nan() && !v.is_nan()),
        };
        if better {
            best = Some((v, cp));
        }
    }
    RunSummary {
        env: input.env.name.clone(),
        method: input.method.to_string(),
        schedule: input.schedule.map(str::to_string),
        seed: input.seed,
        config_hash: input.config_hash,
        steps: run.steps.len(),
        status: if run.failure.is_some() { "failed" } else { "ok" }.into(),
        failure: run.failure.clone(),
        key_metric: input.key_metric.to_string(),
        eval_interval: interval,
        best: best.map(|(_, cp)| cp),
        last: run.last().map(|m| checkpoint(input.env, m, input.key_metric).1),
    }
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `<env>_<method>_<schedule>_seed<k>` without extension.
pub fn run_stem(env: &str, method: &str, schedule_label: &str, seed: u64) -> String {
    format!("{env}_{method}_{schedule_label}_seed{seed}")
}
