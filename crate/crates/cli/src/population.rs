use regpol_core::format::{fmt17, fmt3};
use regpol_core::population::{
    foc_residual, optimal_fraction, optimal_rule, regret, restricted_rule, DiscreteDgp, RegretProfile, TabularRule,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{Loaded, PopulationConfig, RuleValue};
use crate::error::CliResult;
use crate::output::{header, OutputDir};
use crate::{plan, Outcome};

#[derive(Debug, Serialize)]
struct RuleRow {
    label: String,
    rule: TabularRule,
    profile: RegretProfile,
    /// `(α, I_α)` pairs.
    atkinson: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
struct OptimalRow {
    alpha: f64,
    w: String,
    delta: f64,
    non_unique: bool,
    loss: f64,
    /// Undefined at α = 1.
    foc_residual: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    rules: Vec<RuleRow>,
    optimal: Vec<OptimalRow>,
    restricted: Vec<(String, u8)>,
}

pub fn to_rule(dgp: &DiscreteDgp, v: &RuleValue) -> TabularRule {
    match v {
        RuleValue::Uniform(d) => TabularRule::uniform(dgp, *d),
        RuleValue::PerGroup(m) => TabularRule::from_pairs(m.clone()),
    }
}

fn validate_alphas(alphas: &[f64]) -> CliResult<()> {
    if let Some(&a) = alphas.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
        return Err(regpol_core::Error::InvalidAlpha(a).into());
    }
    Ok(())
}

pub(crate) fn alpha_label(a: f64) -> String {
    format!("{a}")
}

pub fn run(loaded: &Loaded<PopulationConfig>, dry_run: bool) -> CliResult<Outcome> {
    let cfg = &loaded.config;
    let dgp = cfg.dgp.load(&loaded.base_dir)?;
    validate_alphas(&cfg.alphas)?;
    let rules: Vec<(String, TabularRule)> = cfg.rules.iter().map(|r| (r.label.clone(), to_rule(&dgp, &r.delta))).collect();
    for (_, rule) in &rules {
        regret(&dgp, rule)?;
    }
    if dry_run {
        let extra = json!({ "groups": dgp.groups(), "cells": dgp.cells().len() });
        return Ok(Outcome {
            files: Vec::new(),
            summary: plan("population", cfg, extra, &["regret.csv", "optimal.csv", "report.json"]),
        });
    }

    let mut rows = Vec::new();
    for (label, rule) in rules {
        let profile = regret(&dgp, &rule)?;
        let atkinson = cfg
            .alphas
            .iter()
            .map(|&a| Ok((a, profile.atkinson_index(a)?)))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(RuleRow { label, rule, profile, atkinson });
    }
    let mut optimal = Vec::new();
    for &alpha in &cfg.alphas {
        let rule = optimal_rule(&dgp, alpha)?;
        let loss = regpol_core::population::loss_alpha(&dgp, &rule, alpha)?;
        for w in dgp.groups() {
            let f = optimal_fraction(&dgp, w, alpha)?;
            optimal.push(OptimalRow {
                alpha,
                w: w.clone(),
                delta: f.value,
                non_unique: f.non_unique,
                loss,
                foc_residual: if alpha > 1.0 { Some(foc_residual(&dgp, &rule, alpha, w)?) } else { None },
            });
        }
    }
    let restricted = dgp
        .groups()
        .iter()
        .map(|w| Ok((w.clone(), restricted_rule(&dgp, w)?)))
        .collect::<CliResult<Vec<_>>>()?;

    let mut out = OutputDir::create(&loaded.resolve(&cfg.output_dir))?;
    let mut head = vec!["rule".to_string()];
    for c in dgp.cells() {
        head.push(format!("regret_{}_{}", c.w, c.x));
    }
    head.push("mean_regret".into());
    for &a in &cfg.alphas {
        head.push(format!("atkinson_{}", alpha_label(a)));
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.label.clone()];
            line.extend(r.profile.cells.iter().map(|c| fmt17(c.regret)));
            line.push(fmt17(r.profile.mean_regret));
            line.extend(r.atkinson.iter().map(|(_, i)| fmt17(*i)));
            line
        })
        .collect();
    out.csv("regret.csv", &head, &table)?;
    let opt_rows: Vec<Vec<String>> = optimal
        .iter()
        .map(|o| {
            vec![
                alpha_label(o.alpha),
                o.w.clone(),
                fmt17(o.delta),
                o.non_unique.to_string(),
                fmt17(o.loss),
                o.foc_residual.map_or_else(String::new, fmt17),
            ]
        })
        .collect();
    out.csv("optimal.csv", &header(&["alpha", "w", "delta", "non_unique", "loss", "foc_residual"]), &opt_rows)?;
    let report = Report { rules: rows, optimal, restricted };
    out.json("report.json", &report)?;

    let mut summary = String::new();
    summary.push_str(&head.join("  "));
    summary.push('\n');
    for r in &report.rules {
        let mut cols = vec![r.label.clone()];
        cols.extend(r.profile.cells.iter().map(|c| fmt3(c.regret)));
        cols.push(fmt3(r.profile.mean_regret));
        cols.extend(r.atkinson.iter().map(|(_, i)| fmt3(*i)));
        summary.push_str(&cols.join("  "));
        summary.push('\n');
    }
    for o in &report.optimal {
        summary.push_str(&format!("optimal alpha={} w={}: {}\n", alpha_label(o.alpha), o.w, fmt3(o.delta)));
    }
    Ok(Outcome {
        files: out.into_files(),
        summary: summary.trim_end().to_string(),
    })
}
