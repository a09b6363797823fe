//! Subcommand implementations, independent of argument parsing.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rvpo_core::{
    aggregate_group, compute_advantages, softmin_diagnostics, train_run, AdvantageOptions,
    AggregationMethod, EnvSpec, RewardMatrix, WeightedChannelSpec,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{parse_method, schedule_label, ExperimentConfig, RunSpec, WeightingModeName};
use crate::error::{CliError, CliResult};
use crate::export::{self, RunSummary, SummaryInput};
use crate::format::num;
use crate::svg;
use crate::verify::{self, PropertyResult, VerifyOptions};

// ---------------------------------------------------------------- aggregate

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateInput {
    pub rewards: Vec<Vec<f64>>,
    pub active: Option<Vec<bool>>,
    pub weights: Option<Vec<f64>>,
    pub weight_mode: Option<WeightingModeName>,
}

#[derive(Debug, Clone)]
pub struct AggregateArgs {
    pub method: String,
    pub k_or_beta: Option<String>,
    pub epsilon: f64,
}

fn float(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(num(x))
    }
}

/// Aggregates one reward matrix given as JSON text; returns the output document.
///
/// Output floats are written at full precision so that re-whitening the
/// written advantages is exact up to the whitening epsilon.
pub fn aggregate_json(text: &str, args: &AggregateArgs) -> CliResult<Value> {
    let input: AggregateInput =
        serde_json::from_str(text).map_err(|e| CliError::validation("input", e))?;
    let m = input.rewards.first().map_or(0, Vec::len);
    if let Some((g, row)) = input.rewards.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(CliError::Validation(format!(
            "rewards: row {g} has {} entries, expected {m}",
            row.len()
        )));
    }
    let active = input.active.clone().unwrap_or_else(|| vec![true; m]);
    if active.len() != m {
        return Err(CliError::Validation(format!(
            "active: {} entries for {m} channels",
            active.len()
        )));
    }
    if let Some(w) = &input.weights {
        if w.len() != m {
            return Err(CliError::Validation(format!("weights: {} entries for {m} channels", w.len())));
        }
    }
    let rewards = RewardMatrix::with_mask(&input.rewards, active)
        .map_err(|e| CliError::validation("rewards", e))?;
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(CliError::Validation(format!("epsilon: must be positive, got {}", args.epsilon)));
    }

    let weights = input.weights.clone().unwrap_or_else(|| vec![1.0; m]);
    let method = parse_method(&args.method, args.k_or_beta.as_deref(), 1, &weights)
        .map_err(|e| CliError::Validation(format!("method: {e}")))?;
    let mode = match (&method, input.weight_mode, &input.weights) {
        (AggregationMethod::GrpoExplicitScalar(_), _, _) => WeightingModeName::None,
        (_, Some(mode), _) => mode,
        (_, None, Some(_)) => WeightingModeName::Pre,
        (_, None, None) => WeightingModeName::None,
    };
    let weighting = match mode {
        WeightingModeName::None => WeightedChannelSpec::unweighted(),
        WeightingModeName::Pre => WeightedChannelSpec::pre(weights.clone()),
        WeightingModeName::Post => WeightedChannelSpec::post(weights.clone()),
    };
    let options = AdvantageOptions {
        epsilon: args.epsilon,
        whiten_epsilon: args.epsilon,
        ..Default::default()
    };
    let field = |e: rvpo_core::RvpoError| CliError::validation("weights", e);
    let group = aggregate_group(&method, &rewards, &weighting, 0, args.epsilon).map_err(field)?;
    let batch = compute_advantages(std::slice::from_ref(&rewards), &method, &weighting, 0, &options)
        .map_err(field)?;

    let k = match &method {
        AggregationMethod::Rvpo(s) => Some(s.value_at(0)),
        _ => None,
    };
    let mut diagnostics = Vec::with_capacity(rewards.groups());
    for g in 0..rewards.groups() {
        let row = group.scores.active_row(g);
        let d = softmin_diagnostics(&row, k.unwrap_or(0.0))?;
        let mut entry = json!({
            "generation": g,
            "mu_z": float(d.mean),
            "var_z": float(d.variance),
        });
        if let Some(k) = k {
            entry["softmin"] = float(d.softmin);
            if k.is_finite() {
                entry["taylor_value"] = float(d.taylor_value);
                entry["taylor_error"] = float(d.taylor_error);
            }
        }
        diagnostics.push(entry);
    }
    Ok(json!({
        "method": method.name(),
        "coefficient": batch.coefficient.map(float),
        "epsilon": args.epsilon,
        "weight_mode": mode,
        "aggregates": batch.per_prompt[0],
        "whitened": batch.whitened,
        "batch_mean": batch.batch_mean,
        "batch_std": batch.batch_std,
        "diagnostics": diagnostics,
    }))
}

pub fn cmd_aggregate(input: &Path, output: Option<&Path>, args: &AggregateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Validation(format!("input {}: {e}", input.display())))?;
    let doc = aggregate_json(&text, args)?;
    let mut body = serde_json::to_string_pretty(&doc).expect("json value serializes");
    body.push('\n');
    match output {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

// ---------------------------------------------------------------- train/sweep

/// One finished (or failed) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: String,
    pub schedule: Option<String>,
    pub seed: u64,
    pub stem: String,
    pub result: Result<RunSummary, String>,
}

impl RunOutcome {
    pub fn failure(&self) -> Option<String> {
        match &self.result {
            Err(e) => Some(e.clone()),
            Ok(s) => s.failure.clone(),
        }
    }
}

/// Trains one cell and writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn run_cell(
    cfg: &ExperimentConfig,
    env: &EnvSpec,
    method: &str,
    schedule: Option<&str>,
    seed: u64,
    dir: &Path,
) -> RunOutcome {
    let stem = export::run_stem(&env.name, method, &schedule_label(schedule), seed);
    let result = (|| -> CliResult<RunSummary> {
        let training = cfg.training_config(env, method, schedule, seed)?;
        let spec = RunSpec {
            env,
            training: &training,
            schedule,
            eval_interval: cfg.eval_interval(),
            key_metric: cfg.key_metric(),
        };
        let run = train_run(env, &training)?;
        export::write_run_csv(&dir.join(format!("{stem}.csv")), env, &run)?;
        let summary = export::summarize(
            SummaryInput {
                env,
                method,
                schedule,
                seed,
                config_hash: spec.hash(),
                key_metric: cfg.key_metric(),
                eval_interval: cfg.eval_interval(),
            },
            &run,
        );
        export::write_summary(&dir.join(format!("{stem}.json")), &summary)?;
        Ok(summary)
    })()
    .map_err(|e| e.to_string());
    RunOutcome {
        method: method.to_string(),
        schedule: schedule.map(str::to_string),
        seed,
        stem,
        result,
    }
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> CliResult<EnvSpec> {
    let env = cfg.env.resolve()?;
    export::check_key_metric(&env, cfg.key_metric())?;
    std::fs::create_dir_all(out)?;
    Ok(env)
}

/// One run per seed. A numeric failure still writes the partial CSV and a
/// summary carrying the failure, then reports a runtime error.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> CliResult<Vec<RunOutcome>> {
    let env = prepare(cfg, out)?;
    let schedule = cfg.schedule.as_deref();
    // Reject bad configs before any work.
    cfg.training_config(&env, &cfg.method, schedule, cfg.seeds[0])?;
    let outcomes: Vec<RunOutcome> = pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_cell(cfg, &env, &cfg.method, schedule, seed, out))
            .collect()
    });
    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.failure().map(|f| format!("{}: {f}", o.stem)))
        .collect();
    if failures.is_empty() {
        Ok(outcomes)
    } else {
        Err(CliError::Runtime(failures.join("\n")))
    }
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "env",
    "method",
    "schedule",
    "seed",
    "key_metric",
    "best_step",
    "best_value",
    "final_step",
    "final_value",
    "config_hash",
];

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<Vec<String>>,
    pub failures: Vec<(String, String)>,
}

fn checkpoint_cells(cp: &Option<export::Checkpoint>) -> [String; 2] {
    match cp {
        Some(c) => [
            c.step.to_string(),
            match &c.value {
                Value::Number(n) => n.to_string(),
                Value::String(s) => s.clone(),
                _ => String::new(),
            },
        ],
        None => [String::new(), String::new()],
    }
}

/// Runs every (method, schedule) cell for every seed in parallel; cell failures
/// are collected and reported rather than aborting the sweep.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> CliResult<SweepReport> {
    let env = prepare(cfg, out)?;
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let jobs_list: Vec<(String, Option<String>, u64)> = cfg
        .sweep_cells()
        .into_iter()
        .flat_map(|(m, s)| cfg.seeds.iter().map(move |&seed| (m.clone(), s.clone(), seed)))
        .collect();
    let outcomes: Vec<RunOutcome> = pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|(m, s, seed)| run_cell(cfg, &env, m, s.as_deref(), *seed, &runs_dir))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in &outcomes {
        match (&o.result, o.failure()) {
            (Ok(s), None) => {
                let [best_step, best_value] = checkpoint_cells(&s.best);
                let [final_step, final_value] = checkpoint_cells(&s.last);
                rows.push(vec![
                    s.env.clone(),
                    o.method.clone(),
                    o.schedule.clone().unwrap_or_else(|| "none".into()),
                    o.seed.to_string(),
                    s.key_metric.clone(),
                    best_step,
                    best_value,
                    final_step,
                    final_value,
                    s.config_hash.clone(),
                ]);
            }
            (_, failure) => failures.push((o.stem.clone(), failure.unwrap_or_default())),
        }
    }

    let mut w = csv::Writer::from_path(out.join("sweep_summary.csv"))?;
    w.write_record(SWEEP_COLUMNS)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    std::fs::write(out.join("sweep_summary.txt"), aligned_table(&rows, &failures))?;
    Ok(SweepReport { rows, failures })
}

pub fn aligned_table(rows: &[Vec<String>], failures: &[(String, String)]) -> String {
    let mut widths: Vec<usize> = SWEEP_COLUMNS.iter().map(|c| c.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let cols: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        cols.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(SWEEP_COLUMNS.to_vec());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    if !failures.is_empty() {
        out += &format!("\nfailures ({}):\n", failures.len());
        for (stem, why) in failures {
            out += &format!("  {stem}: {}\n", why.replace('\n', " "));
        }
    }
    out
}

// ---------------------------------------------------------------- verify/plot

pub fn cmd_verify(opts: &VerifyOptions) -> CliResult<Vec<PropertyResult>> {
    let results = verify::run_battery(opts);
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{}: {}", r.name, r.counterexample.as_deref().unwrap_or_default()))
        .collect();
    println!("{} of {} properties passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::Verification(format!("failed properties:\n{}", failed.join("\n"))))
    }
}

pub fn cmd_plot(csvs: &[PathBuf], metrics: &[String], out: &Path) -> CliResult<Vec<PathBuf>> {
    svg::plot(csvs, metrics, out)
}
