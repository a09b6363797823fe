use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rvpo_cli::commands::{self, AggregateArgs};
use rvpo_cli::config::ExperimentConfig;
use rvpo_cli::verify::VerifyOptions;
use rvpo_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "rvpo", version, about = "Multi-objective advantage aggregation experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config's `seeds`.
    #[arg(long, alias = "seed", global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Steps between best-checkpoint evaluations.
    #[arg(long, global = true)]
    eval_interval: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate and whiten one reward matrix.
    Aggregate {
        /// JSON with `rewards`, optional `active`, `weights`, `weight_mode`.
        #[arg(long)]
        input: PathBuf,
        /// grpo, gdpo, rvpo, rvpo-explicit, hardmin, or grpo-explicit.
        #[arg(long)]
        method: String,
        /// `k` for rvpo or `beta` for rvpo-explicit ("inf" allowed for rvpo).
        #[arg(long = "k", alias = "beta")]
        k_or_beta: Option<String>,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one run per seed.
    Train,
    /// Train every method x schedule x seed cell and tabulate results.
    Sweep,
    /// Run the property battery.
    Verify {
        #[arg(long, default_value_t = 0)]
        battery_seed: u64,
    },
    /// Plot CSV columns to SVG, one chart per metric.
    Plot {
        /// Run CSVs; files differing only in `_seed<k>` share a series.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Metric columns (repeatable or comma-separated).
        #[arg(long, value_delimiter = ',')]
        metric: Vec<String>,
    },
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Validation("config: --config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seeds) = &cli.seeds {
        if seeds.is_empty() {
            return Err(CliError::Validation("seeds: at least one seed is required".into()));
        }
        cfg.seeds = seeds.clone();
    }
    if let Some(n) = cli.eval_interval {
        cfg.eval_interval = Some(n);
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| Path::new("runs").to_path_buf())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Aggregate {
            input,
            method,
            k_or_beta,
            epsilon,
            output,
        } => commands::cmd_aggregate(
            input,
            output.as_deref(),
            &AggregateArgs {
                method: method.clone(),
                k_or_beta: k_or_beta.clone(),
                epsilon: *epsilon,
            },
        ),
        Command::Train => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            for o in commands::cmd_train(&cfg, &out, cli.jobs)? {
                println!("{}", out.join(format!("{}.csv", o.stem)).display());
            }
            Ok(())
        }
        Command::Sweep => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let report = commands::cmd_sweep(&cfg, &out, cli.jobs)?;
            print!("{}", commands::aligned_table(&report.rows, &report.failures));
            Ok(())
        }
        Command::Verify { battery_seed } => commands::cmd_verify(&VerifyOptions {
            seed: *battery_seed,
            ..Default::default()
        })
        .map(|_| ()),
        Command::Plot { csv, metric } => {
            let out = out_dir(cli, None);
            for p in commands::cmd_plot(csv, metric, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
