use regpol_core::basis::{build_basis, Basis, BasisMatrix};
use regpol_core::data::{load_csv, partition_folds, Dataset};
use regpol_core::estimation::{
    bracket_groups, clamp_unit, conditioning_report, estimate_capacity_constrained, estimate_on_basis,
    estimate_restricted, CapacityEstimate, ConditioningReport, Method, SievePolicyEstimate,
};
use regpol_core::format::{fmt17, fmt3};
use regpol_core::nuisance::{
    compute_debiased_weights, fit_nuisance, DebiasedWeights, NuisanceFit, OmegaModel, WeightDiagnostics,
};
use regpol_core::rng::derive_seed_path;
use serde::Serialize;
use serde_json::json;

use crate::config::{LearnConfig, Loaded};
use crate::error::{CliError, CliResult};
use crate::output::{header, OutputDir};
use crate::{plan, Outcome};

const MAX_GRID: usize = 1_000_000;

#[derive(Debug, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub size: usize,
    pub outcome_penalty_treated: f64,
    pub outcome_penalty_control: f64,
    pub lambda_treated: Option<f64>,
    pub lambda_control: Option<f64>,
    pub cond_g1: Option<f64>,
    pub cond_g0: Option<f64>,
    pub pseudo_inverse: bool,
}

#[derive(Debug, Serialize)]
pub struct BasisReport {
    pub kind: &'static str,
    pub d_p: usize,
    pub squared_space_dim: usize,
    pub zeta_p: f64,
    pub clamped_rows: usize,
}

/// Range of the fitted rule over the sample.
#[derive(Debug, Serialize)]
pub struct PolicyRange {
    pub raw_min: f64,
    pub raw_max: f64,
    pub trimmed_min: f64,
    pub trimmed_max: f64,
    pub below_zero_fraction: f64,
    pub above_one_fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct LearnReport {
    pub method: Method,
    pub n: usize,
    pub w_names: Vec<String>,
    pub k_folds: usize,
    pub seed: u64,
    pub basis: BasisReport,
    pub folds: Vec<FoldReport>,
    pub weights: WeightDiagnostics,
    pub conditioning: ConditioningReport,
    pub foc_residual: f64,
    pub policy: PolicyRange,
    /// Best `{0, 1}` action per bracket cell.
    pub restricted: Option<Vec<u8>>,
    pub capacity: Option<CapacityEstimate>,
    pub warnings: Vec<String>,
}

fn fold_reports(fit: &NuisanceFit) -> Vec<FoldReport> {
    let sizes = fit.folds.sizes();
    fit.per_fold
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (l1, l0, c1, c0, pinv) = match &f.omega {
                OmegaModel::Balancing(b) => (Some(b.lambda1), Some(b.lambda0), Some(b.cond_g1), Some(b.cond_g0), b.pseudo_inverse),
                OmegaModel::KnownPropensity { .. } => (None, None, None, None, false),
            };
            FoldReport {
                fold: k,
                size: sizes[k],
                outcome_penalty_treated: f.outcome.gamma1.penalty,
                outcome_penalty_control: f.outcome.gamma0.penalty,
                lambda_treated: l1,
                lambda_control: l0,
                cond_g1: c1,
                cond_g0: c0,
                pseudo_inverse: pinv,
            }
        })
        .collect()
}

fn policy_range(est: &SievePolicyEstimate, matrix: &BasisMatrix) -> PolicyRange {
    let raw: Vec<f64> = matrix
        .rows
        .iter()
        .map(|p| p.iter().zip(&est.beta_hat).map(|(a, b)| a * b).sum())
        .collect();
    let n = raw.len() as f64;
    let fold = |init: f64, f: fn(f64, f64) -> f64, g: fn(f64) -> f64| raw.iter().map(|&v| g(v)).fold(init, f);
    PolicyRange {
        raw_min: fold(f64::INFINITY, f64::min, |v| v),
        raw_max: fold(f64::NEG_INFINITY, f64::max, |v| v),
        trimmed_min: fold(f64::INFINITY, f64::min, clamp_unit),
        trimmed_max: fold(f64::NEG_INFINITY, f64::max, clamp_unit),
        below_zero_fraction: raw.iter().filter(|&&v| v < 0.0).count() as f64 / n,
        above_one_fraction: raw.iter().filter(|&&v| v > 1.0).count() as f64 / n,
    }
}

/// Basis-function labels: `cell_<k>` for brackets, `b_<i>_<j>...` for
/// tensor splines (first dimension slowest).
fn term_labels(basis: &Basis) -> Vec<String> {
    match basis {
        Basis::Bracket(_) => (0..basis.dim()).map(|k| format!("cell_{k}")).collect(),
        Basis::Bspline(t) => {
            let mut labels = vec![String::from("b")];
            for uni in &t.dims {
                labels = labels
                    .iter()
                    .flat_map(|l| (0..uni.dof()).map(move |j| format!("{l}_{j}")))
                    .collect();
            }
            labels
        }
    }
}

fn spline_grid(basis: &Basis, points: usize) -> CliResult<Vec<Vec<f64>>> {
    let Basis::Bspline(t) = basis else { return Ok(Vec::new()) };
    let total = t.dims.iter().try_fold(1usize, |acc, _| acc.checked_mul(points));
    if points < 2 || total.is_none_or(|n| n > MAX_GRID) {
        return Err(CliError::Config {
            path: "/grid_points".into(),
            message: format!("need at least 2 points and at most {MAX_GRID} grid rows"),
        });
    }
    let mut grid = vec![Vec::new()];
    for uni in &t.dims {
        let axis: Vec<f64> = (0..points)
            .map(|i| uni.lo + (uni.hi - uni.lo) * i as f64 / (points - 1) as f64)
            .collect();
        grid = grid
            .iter()
            .flat_map(|g| {
                axis.iter().map(move |&v| {
                    let mut next = g.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    Ok(grid)
}

fn validate(cfg: &LearnConfig, data: &Dataset) -> CliResult<()> {
    cfg.nuisance.validate(data.dim_x())?;
    if cfg.basis.input_dim() != data.dim_w() {
        return Err(regpol_core::Error::DimensionMismatch {
            expected: data.dim_w(),
            found: cfg.basis.input_dim(),
        }
        .into());
    }
    if let Some(t) = cfg.capacity {
        if !cfg.basis.is_bracket() {
            return Err(regpol_core::Error::UnsupportedBasis.into());
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(regpol_core::Error::InfeasibleCapacity(t).into());
        }
    }
    if !(cfg.min_eig_warn >= 0.0) {
        return Err(CliError::Config {
            path: "/min_eig_warn".into(),
            message: "must be nonnegative".into(),
        });
    }
    Ok(())
}

pub fn run(loaded: &Loaded<LearnConfig>, dry_run: bool) -> CliResult<Outcome> {
    let cfg = &loaded.config;
    let schema = cfg.schema.schema()?;
    let data = load_csv(loaded.resolve(&cfg.data), &schema)?;
    validate(cfg, &data)?;
    let folds = partition_folds(data.n(), cfg.k_folds, derive_seed_path(cfg.seed, &[0]))?;
    let (basis, matrix) = build_basis(&cfg.basis, &data.w_rows())?;
    let grid = spline_grid(&basis, cfg.grid_points)?;
    if dry_run {
        let extra = json!({
            "n": data.n(),
            "treated_fraction": data.treated_fraction(),
            "fold_sizes": folds.sizes(),
            "basis_dim": basis.dim(),
        });
        let mut outputs = vec!["coefficients.csv", "basis.json", "grid.csv", "weights.csv", "nuisance.json", "report.json"];
        if cfg.capacity.is_some() {
            outputs.push("capacity.csv");
        }
        return Ok(Outcome {
            files: Vec::new(),
            summary: plan("learn", cfg, extra, &outputs),
        });
    }

    let fit = fit_nuisance(&data, &folds, &cfg.nuisance, derive_seed_path(cfg.seed, &[1]))?;
    let weights = compute_debiased_weights(&data, &fit)?;
    let plug_xi: Vec<f64> = weights.tau_hat.iter().map(|t| t * t).collect();
    let xi = match cfg.method {
        Method::Debiased => &weights.xi_hat,
        Method::Plugin => &plug_xi,
    };
    let est = estimate_on_basis(&basis, &matrix, xi, &weights.tau_hat, cfg.method)?;
    let conditioning = conditioning_report(&est, &weights, cfg.min_eig_warn);
    let mut warnings: Vec<String> = conditioning.warning.iter().cloned().collect();
    if matrix.clamped > 0 {
        warnings.push(format!("{} row(s) clamped into the spline domain", matrix.clamped));
    }
    let groups = basis.as_bracket().map(|_| bracket_groups(&data, &basis)).transpose()?;
    let rule_weights = match cfg.method {
        Method::Debiased => weights.clone(),
        Method::Plugin => DebiasedWeights::plugin(weights.tau_hat.clone()),
    };
    let restricted = match &groups {
        Some(g) => match estimate_restricted(&rule_weights, g, basis.dim()) {
            Ok(r) => Some(r),
            Err(regpol_core::Error::EmptyGroup(_)) => {
                warnings.push("restricted rule omitted: some bracket cell is empty".into());
                None
            }
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let capacity = match cfg.capacity {
        Some(t) => {
            let c = estimate_capacity_constrained(&data, &cfg.basis, &rule_weights, t)?;
            warnings.extend(c.warnings.iter().cloned());
            Some(c)
        }
        None => None,
    };

    let report = LearnReport {
        method: cfg.method,
        n: data.n(),
        w_names: data.w_names(),
        k_folds: cfg.k_folds,
        seed: cfg.seed,
        basis: BasisReport {
            kind: if basis.as_bracket().is_some() { "bracket" } else { "bspline" },
            d_p: basis.dim(),
            squared_space_dim: basis.squared_space_dim(),
            zeta_p: matrix.zeta_p,
            clamped_rows: matrix.clamped,
        },
        folds: fold_reports(&fit),
        weights: weights.diagnostics.clone(),
        conditioning,
        foc_residual: est.foc_residual(),
        policy: policy_range(&est, &matrix),
        restricted,
        capacity,
        warnings,
    };

    let mut out = OutputDir::create(&loaded.resolve(&cfg.output_dir))?;
    out.csv("coefficients.csv", &term_labels(&basis), &[est.beta_hat.iter().map(|&b| fmt17(b)).collect()])?;
    out.json("basis.json", &basis)?;
    write_grid(&mut out, &data, &basis, &est, &grid, groups.as_deref(), report.restricted.as_deref())?;
    let weight_rows: Vec<Vec<String>> = (0..data.n())
        .map(|i| {
            vec![
                i.to_string(),
                folds.fold_of[i].to_string(),
                fmt17(weights.tau_hat[i]),
                fmt17(weights.xi_hat[i]),
            ]
        })
        .collect();
    out.csv("weights.csv", &header(&["row", "fold", "tau_hat", "xi_hat"]), &weight_rows)?;
    let mut audit = fit.to_json();
    audit.push('\n');
    out.write("nuisance.json", audit.as_bytes())?;
    out.json("report.json", &report)?;
    if let Some(c) = &report.capacity {
        let rows: Vec<Vec<String>> = c
            .delta
            .iter()
            .zip(c.trimmed())
            .enumerate()
            .map(|(k, (&raw, trimmed))| vec![k.to_string(), c.cell_counts[k].to_string(), fmt17(raw), fmt17(trimmed)])
            .collect();
        out.csv("capacity.csv", &header(&["cell", "n", "delta_raw", "delta"]), &rows)?;
    }

    let summary = format!(
        "method {}: n = {}, d_p = {}, min eig = {}, negative xi share = {}, policy range [{}, {}]{}",
        report.method,
        report.n,
        report.basis.d_p,
        fmt3(report.conditioning.min_eig),
        fmt3(report.weights.negative_fraction),
        fmt3(report.policy.trimmed_min),
        fmt3(report.policy.trimmed_max),
        report.warnings.iter().map(|w| format!("\nwarning: {w}")).collect::<String>(),
    );
    Ok(Outcome {
        files: out.into_files(),
        summary,
    })
}

fn write_grid(
    out: &mut OutputDir,
    data: &Dataset,
    basis: &Basis,
    est: &SievePolicyEstimate,
    grid: &[Vec<f64>],
    groups: Option<&[usize]>,
    restricted: Option<&[u8]>,
) -> CliResult<()> {
    let names = data.w_names();
    match (basis.as_bracket(), groups) {
        (Some(b), Some(groups)) => {
            let mut head = vec!["cell".to_string()];
            for n in &names {
                head.push(format!("{n}_lo"));
                head.push(format!("{n}_hi"));
            }
            head.extend(header(&["n", "delta_raw", "delta", "restricted"]));
            let mut counts = vec![0usize; basis.dim()];
            for &g in groups {
                counts[g] += 1;
            }
            let rows: Vec<Vec<String>> = (0..basis.dim())
                .map(|k| {
                    let mut row = vec![k.to_string()];
                    for (lo, hi) in b.cell_bounds(k) {
                        row.push(fmt17(lo));
                        row.push(fmt17(hi));
                    }
                    let raw = est.beta_hat[k];
                    row.push(counts[k].to_string());
                    row.push(fmt17(raw));
                    row.push(fmt17(clamp_unit(raw)));
                    row.push(restricted.map_or_else(String::new, |r| r[k].to_string()));
                    row
                })
                .collect();
            out.csv("grid.csv", &head, &rows)
        }
        _ => {
            let mut head = names.clone();
            head.extend(header(&["delta_raw", "delta"]));
            let rows = grid
                .iter()
                .map(|w| {
                    let raw = est.raw(w)?;
                    let mut row: Vec<String> = w.iter().map(|&v| fmt17(v)).collect();
                    row.push(fmt17(raw));
                    row.push(fmt17(clamp_unit(raw)));
                    Ok(row)
                })
                .collect::<CliResult<Vec<_>>>()?;
            out.csv("grid.csv", &head, &rows)
        }
    }
}
