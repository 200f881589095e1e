use regpol_core::format::fmt3;
use regpol_core::simulation::run_rate_experiment;
use serde_json::json;

use crate::config::{Loaded, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;
use crate::{plan, Outcome};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.1;

pub fn run(loaded: &Loaded<SimulateConfig>, dry_run: bool) -> CliResult<Outcome> {
    let cfg = &loaded.config;
    cfg.dgp.validate()?;
    cfg.estimator.nuisance.validate(cfg.dgp.column_names().len())?;
    if cfg.estimator.basis.input_dim() != 1 {
        return Err(regpol_core::Error::DimensionMismatch {
            expected: 1,
            found: cfg.estimator.basis.input_dim(),
        }
        .into());
    }
    if let Some(&n) = cfg.n_grid.first() {
        if cfg.estimator.k_folds < 2 || n < 2 * cfg.estimator.k_folds {
            return Err(regpol_core::Error::InvalidFoldCount {
                n,
                k: cfg.estimator.k_folds,
            }
            .into());
        }
    }
    if dry_run {
        let extra = json!({ "jobs": cfg.n_grid.len() * cfg.replications });
        return Ok(Outcome {
            files: Vec::new(),
            summary: plan("simulate", cfg, extra, &["replications.csv", "summary.json"]),
        });
    }
    let report = run_rate_experiment(&cfg.dgp, &cfg.estimator, &cfg.n_grid, cfg.replications, cfg.seed)?;
    let mut out = OutputDir::create(&loaded.resolve(&cfg.output_dir))?;
    out.write("replications.csv", report.to_csv().as_bytes())?;
    let mut summary_json = report.summary_json();
    summary_json.push('\n');
    out.write("summary.json", summary_json.as_bytes())?;

    if report.failure_rate() > MAX_FAILURE_RATE {
        return Err(CliError::ReplicationFailures {
            failed: report.failures,
            total: cfg.n_grid.len() * cfg.replications,
            first: report.first_error.clone().unwrap_or_default(),
        });
    }
    let mut summary = String::from("n  mean_excess_risk  std_error  failures\n");
    for s in &report.summary {
        summary.push_str(&format!("{}  {}  {}  {}\n", s.n, fmt3_sci(s.mean), fmt3_sci(s.std_error), s.failures));
    }
    match report.slope {
        Some(b) => summary.push_str(&format!("log-log slope: {}", fmt3(b))),
        None => summary.push_str(report.note.as_deref().unwrap_or("no slope")),
    }
    Ok(Outcome {
        files: out.into_files(),
        summary,
    })
}

/// Three significant digits in scientific notation.
fn fmt3_sci(v: f64) -> String {
    format!("{v:.3e}")
}
