//! Batch front end: learn policies from CSV data, evaluate discrete
//! populations, solve capacity problems and run Monte Carlo experiments.

pub mod capacity;
pub mod config;
pub mod error;
pub mod learn;
pub mod output;
pub mod population;
pub mod simulate;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "regpol", version, about = "Regret-averse policy targeting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a sieve policy from a CSV sample.
    Learn(LearnArgs),
    /// Regret table and optimal fractions of a discrete law.
    Population(CommonArgs),
    /// Optimal rules under a capacity constraint.
    Capacity(CommonArgs),
    /// Monte Carlo rate experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, relative to the working directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Override a config key, e.g. `--set nuisance.outcome.kind=lasso`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Validate the config and print the resolved plan.
    #[arg(long)]
    pub dry_run: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `debiased` or `plugin`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human summary, or the resolved plan for a dry run.
    pub summary: String,
}

impl CommonArgs {
    /// `--set` overrides followed by the dedicated flags.
    fn overrides(&self, extra: &[(&str, Option<Value>)]) -> CliResult<Vec<String>> {
        let mut out = self.set.clone();
        if let Some(dir) = &self.output_dir {
            let abs = std::path::absolute(dir).map_err(|source| CliError::Write {
                path: dir.display().to_string(),
                source,
            })?;
            out.push(format!("output_dir={}", Value::String(abs.display().to_string())));
        }
        for (key, value) in extra {
            if let Some(v) = value {
                out.push(format!("{key}={v}"));
            }
        }
        Ok(out)
    }
}

/// Run one command on a pool of the requested size.
pub fn run(cli: Cli) -> CliResult<Outcome> {
    let threads = match &cli.command {
        Command::Learn(a) => a.common.threads,
        Command::Population(a) | Command::Capacity(a) => a.threads,
        Command::Simulate(a) => a.common.threads,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::ThreadPool(e.to_string()))?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(command: &Command) -> CliResult<Outcome> {
    match command {
        Command::Learn(a) => {
            let extra = [
                ("method", a.method.clone().map(Value::String)),
                ("seed", a.seed.map(Value::from)),
                ("k_folds", a.folds.map(Value::from)),
            ];
            let loaded = config::load(&a.common.config, &a.common.overrides(&extra)?)?;
            learn::run(&loaded, a.common.dry_run)
        }
        Command::Population(a) => {
            let loaded = config::load(&a.config, &a.overrides(&[])?)?;
            population::run(&loaded, a.dry_run)
        }
        Command::Capacity(a) => {
            let loaded = config::load(&a.config, &a.overrides(&[])?)?;
            capacity::run(&loaded, a.dry_run)
        }
        Command::Simulate(a) => {
            let extra = [
                ("seed", a.seed.map(Value::from)),
                ("replications", a.replications.map(Value::from)),
            ];
            let loaded = config::load(&a.common.config, &a.common.overrides(&extra)?)?;
            simulate::run(&loaded, a.common.dry_run)
        }
    }
}

/// Dry-run output: the fully defaulted config and the files a run writes.
pub(crate) fn plan<T: serde::Serialize>(command: &str, config: &T, extra: Value, outputs: &[&str]) -> String {
    let mut v = serde_json::json!({
        "command": command,
        "config": config,
        "outputs": outputs,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, extra) {
        dst.extend(src);
    }
    serde_json::to_string_pretty(&v).expect("plan serializes")
}
