use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{excess_risk, SyntheticDgp};
use crate::basis::{build_basis, BasisSpec};
use crate::data::partition_folds;
use crate::error::{Error, Result};
use crate::estimation::{estimate_on_basis, Method};
use crate::format::fmt17;
use crate::nuisance::{compute_debiased_weights, fit_nuisance, NuisanceSpec};
use crate::rng::derive_seed_path;

fn default_folds() -> usize {
    5
}

fn default_method() -> Method {
    Method::Debiased
}

/// The full pipeline run on each simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_folds")]
    pub k_folds: usize,
    pub nuisance: NuisanceSpec,
    pub basis: BasisSpec,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Also score the plug-in estimator on the same samples.
    #[serde(default)]
    pub paired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub n: usize,
    pub rep: usize,
    pub excess_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_risk_plugin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub successes: usize,
    pub failures: usize,
    pub mean: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_plugin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub method: Method,
    pub seed: u64,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<NSummary>,
    /// OLS slope of `ln(mean excess risk)` on `ln n`.
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_plugin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

impl MonteCarloReport {
    pub fn failure_rate(&self) -> f64 {
        let total = self.n_grid.len() * self.replications;
        if total == 0 {
            0.0
        } else {
            self.failures as f64 / total as f64
        }
    }

    /// `n,rep,excess_risk[,excess_risk_plugin]` with round-trip precision.
    pub fn to_csv(&self) -> String {
        let paired = self.rows.iter().any(|r| r.excess_risk_plugin.is_some());
        let mut out = String::from(if paired { "n,rep,excess_risk,excess_risk_plugin\n" } else { "n,rep,excess_risk\n" });
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.n, r.rep, fmt17(r.excess_risk)));
            if paired {
                out.push(',');
                out.push_str(&r.excess_risk_plugin.map_or_else(String::new, fmt17));
            }
            out.push('\n');
        }
        out
    }

    /// Summary without the per-replication rows.
    pub fn summary_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("rows");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// OLS slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn one_replication(dgp: &SyntheticDgp, cfg: &EstimatorConfig, n: usize, seed: u64) -> Result<(f64, Option<f64>)> {
    let data = dgp.sample(n, derive_seed_path(seed, &[0]))?;
    let folds = partition_folds(n, cfg.k_folds, derive_seed_path(seed, &[1]))?;
    let fit = fit_nuisance(&data, &folds, &cfg.nuisance, derive_seed_path(seed, &[2]))?;
    let weights = compute_debiased_weights(&data, &fit)?;
    let (basis, matrix) = build_basis(&cfg.basis, &data.w_rows())?;
    let plug_xi: Vec<f64> = weights.tau_hat.iter().map(|t| t * t).collect();
    let score = |method: Method| -> Result<f64> {
        let xi = match method {
            Method::Debiased => &weights.xi_hat,
            Method::Plugin => &plug_xi,
        };
        let est = estimate_on_basis(&basis, &matrix, xi, &weights.tau_hat, method)?;
        excess_risk(dgp, &est.trimmed())
    };
    let main = score(cfg.method)?;
    let plugin = if cfg.paired { Some(score(Method::Plugin)?) } else { None };
    Ok((main, plugin))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn slope_over(summary: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = summary
        .iter()
        .filter(|(_, m)| m.is_finite() && *m > 0.0)
        .map(|&(n, m)| ((n as f64).ln(), m.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(ols_slope(&x, &y))
}

/// Run the pipeline `replications` times at each sample size. Replication
/// `r` at grid position `j` uses the seed derived from `(seed, j, r)`, so the
/// report does not depend on the worker count. Failed replications are
/// counted and skipped.
pub fn run_rate_experiment(
    dgp: &SyntheticDgp,
    cfg: &EstimatorConfig,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    dgp.validate()?;
    cfg.nuisance.validate(dgp.column_names().len())?;
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSimulation("n_grid must be non-empty and strictly ascending".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidSimulation("replications must be >= 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..n_grid.len()).flat_map(|j| (0..replications).map(move |r| (j, r))).collect();
    let results: Vec<Result<(f64, Option<f64>)>> = jobs
        .par_iter()
        .map(|&(j, r)| one_replication(dgp, cfg, n_grid[j], derive_seed_path(seed, &[j as u64, r as u64])))
        .collect();

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut failures = 0;
    let mut first_error = None;
    for (j, &n) in n_grid.iter().enumerate() {
        let mut main = Vec::new();
        let mut plug = Vec::new();
        let mut fails = 0;
        for r in 0..replications {
            match &results[j * replications + r] {
                Ok((e, p)) => {
                    rows.push(ReplicationRow {
                        n,
                        rep: r,
                        excess_risk: *e,
                        excess_risk_plugin: *p,
                    });
                    main.push(*e);
                    if let Some(p) = p {
                        plug.push(*p);
                    }
                }
                Err(e) => {
                    fails += 1;
                    first_error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        failures += fails;
        let (mean, se) = mean_se(&main);
        summary.push(NSummary {
            n,
            successes: main.len(),
            failures: fails,
            mean,
            std_error: se,
            ci95: (mean - 1.96 * se, mean + 1.96 * se),
            mean_plugin: cfg.paired.then(|| mean_se(&plug).0),
        });
    }
    let slope = slope_over(&summary.iter().map(|s| (s.n, s.mean)).collect::<Vec<_>>());
    let slope_plugin = if cfg.paired {
        slope_over(&summary.iter().map(|s| (s.n, s.mean_plugin.unwrap_or(f64::NAN))).collect::<Vec<_>>())
    } else {
        None
    };
    let note = slope.is_none().then(|| "slope omitted: needs at least 3 sample sizes with a positive mean excess risk".to_string());
    Ok(MonteCarloReport {
        method: cfg.method,
        seed,
        n_grid: n_grid.to_vec(),
        replications,
        rows,
        summary,
        slope,
        slope_plugin,
        note,
        failures,
        first_error,
    })
}
