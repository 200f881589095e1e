use regpol_core::format::{fmt17, fmt3};
use regpol_core::population::capacity::{capacity_optimal_alpha, CapacityProblem, KktResiduals};
use serde::Serialize;
use serde_json::json;

use crate::config::{CapacityConfig, Loaded};
use crate::error::{CliError, CliResult};
use crate::output::{header, OutputDir};
use crate::population::alpha_label;
use crate::{plan, Outcome};

#[derive(Debug, Serialize)]
struct Row {
    alpha: f64,
    t: f64,
    w: String,
    delta: f64,
    non_unique: bool,
    lambda: f64,
    binding: bool,
}

#[derive(Debug, Serialize)]
struct KktRow {
    t: f64,
    j_star: Option<usize>,
    bound_multipliers: Vec<f64>,
    residuals: KktResiduals,
}

#[derive(Debug, Serialize)]
struct Report {
    groups: Vec<String>,
    solutions: Vec<Row>,
    /// Full KKT check of every α = 2 solve.
    kkt: Vec<KktRow>,
}

fn bad(path: &str, message: &str) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

pub fn run(loaded: &Loaded<CapacityConfig>, dry_run: bool) -> CliResult<Outcome> {
    let cfg = &loaded.config;
    let dgp = match (&cfg.dgp, &cfg.groups) {
        (Some(src), None) => Some(src.load(&loaded.base_dir)?),
        (None, Some(_)) => None,
        _ => return Err(bad("", "give exactly one of \"dgp\" and \"groups\"")),
    };
    let alphas = match (&cfg.alphas, &dgp) {
        (Some(a), Some(_)) => a.clone(),
        (None, Some(_)) => vec![1.0, 2.0, 3.0],
        (Some(a), None) if a.as_slice() != [2.0] => return Err(bad("/alphas", "explicit groups are solved at alpha = 2 only")),
        _ => vec![2.0],
    };
    if let Some(&a) = alphas.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
        return Err(regpol_core::Error::InvalidAlpha(a).into());
    }
    if cfg.capacities.is_empty() {
        return Err(bad("/capacities", "no capacities given"));
    }
    let problem = |t: f64| -> CliResult<CapacityProblem> {
        Ok(match (&dgp, &cfg.groups) {
            (Some(d), _) => CapacityProblem::from_dgp(d, t)?,
            (None, Some(g)) => CapacityProblem::new(g.clone(), t)?,
            (None, None) => unreachable!(),
        })
    };
    for &t in &cfg.capacities {
        problem(t)?;
    }
    let labels: Vec<String> = match (&dgp, &cfg.groups) {
        (Some(d), _) => d.groups().to_vec(),
        (None, Some(g)) => (0..g.len()).map(|j| format!("g{j}")).collect(),
        (None, None) => unreachable!(),
    };
    if dry_run {
        let extra = json!({ "groups": labels, "alphas": alphas });
        return Ok(Outcome {
            files: Vec::new(),
            summary: plan("capacity", cfg, extra, &["capacity.csv", "kkt.csv", "report.json"]),
        });
    }

    let mut rows = Vec::new();
    let mut kkt = Vec::new();
    for &alpha in &alphas {
        for &t in &cfg.capacities {
            if alpha == 2.0 {
                let sol = problem(t)?.solve()?;
                kkt.push(KktRow {
                    t,
                    j_star: sol.j_star,
                    bound_multipliers: sol.bound_multipliers.clone(),
                    residuals: sol.kkt.clone(),
                });
            }
            match &dgp {
                Some(d) => {
                    let sol = capacity_optimal_alpha(d, alpha, t)?;
                    for (w, f) in labels.iter().zip(&sol.delta) {
                        rows.push(Row {
                            alpha,
                            t,
                            w: w.clone(),
                            delta: f.value,
                            non_unique: f.non_unique,
                            lambda: sol.lambda,
                            binding: sol.binding,
                        });
                    }
                }
                None => {
                    let sol = problem(t)?.solve()?;
                    for (w, &d) in labels.iter().zip(&sol.delta) {
                        rows.push(Row {
                            alpha,
                            t,
                            w: w.clone(),
                            delta: d,
                            non_unique: false,
                            lambda: sol.lambda,
                            binding: sol.binding,
                        });
                    }
                }
            }
        }
    }

    let mut out = OutputDir::create(&loaded.resolve(&cfg.output_dir))?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                alpha_label(r.alpha),
                fmt17(r.t),
                r.w.clone(),
                fmt17(r.delta),
                r.non_unique.to_string(),
                fmt17(r.lambda),
                r.binding.to_string(),
            ]
        })
        .collect();
    out.csv("capacity.csv", &header(&["alpha", "t", "w", "delta", "non_unique", "lambda", "binding"]), &table)?;
    let kkt_rows: Vec<Vec<String>> = kkt
        .iter()
        .map(|k| {
            let r = &k.residuals;
            vec![
                fmt17(k.t),
                k.j_star.map_or_else(String::new, |j| j.to_string()),
                fmt17(r.feasibility),
                fmt17(r.stationarity),
                fmt17(r.dual_feasibility),
                fmt17(r.bound_slackness),
                fmt17(r.capacity_slackness),
                fmt17(r.max()),
            ]
        })
        .collect();
    out.csv(
        "kkt.csv",
        &header(&[
            "t",
            "j_star",
            "feasibility",
            "stationarity",
            "dual_feasibility",
            "bound_slackness",
            "capacity_slackness",
            "max",
        ]),
        &kkt_rows,
    )?;
    let report = Report {
        groups: labels,
        solutions: rows,
        kkt,
    };
    out.json("report.json", &report)?;

    let mut summary = String::from("alpha  t  w  delta  binding\n");
    for r in &report.solutions {
        summary.push_str(&format!(
            "{}  {}  {}  {}  {}\n",
            alpha_label(r.alpha),
            fmt3(r.t),
            r.w,
            fmt3(r.delta),
            r.binding
        ));
    }
    Ok(Outcome {
        files: out.into_files(),
        summary: summary.trim_end().to_string(),
    })
}
