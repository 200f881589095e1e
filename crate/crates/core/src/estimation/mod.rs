//! Sieve policy estimators.
//!
//! The debiased estimator solves the weighted least-squares problem
//! `min_β (1/n) Σ ξ̂ᵢ (1{τ̂ᵢ ≥ 0} − β'p(Wᵢ))²`, i.e. `β̂ = Â⁻B̂` with
//! `Â = (1/n) Σ ξ̂ᵢ pᵢpᵢ'` and `B̂ = (1/n) Σ ξ̂ᵢ pᵢ 1{τ̂ᵢ ≥ 0}`. The plug-in
//! variant uses `τ̂ᵢ²` in place of `ξ̂ᵢ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, Basis, BasisMatrix, BasisSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_pinv_solve, weighted_moments, COND_LIMIT, PINV_RCOND};
use crate::nuisance::DebiasedWeights;
use crate::population::{sgn, treat_indicator};

/// Default threshold below which the smallest eigenvalue of `Â` triggers a warning.
pub const MIN_EIG_WARN: f64 = 1e-6;

/// Tolerance on KKT residuals of the empirical capacity program.
pub const CAPACITY_KKT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Debiased,
    Plugin,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Debiased => "debiased",
            Method::Plugin => "plugin",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "debiased" => Ok(Method::Debiased),
            "plugin" => Ok(Method::Plugin),
            other => Err(Error::InvalidLearner(format!("unknown method \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SievePolicyEstimate {
    pub beta_hat: Vec<f64>,
    pub basis: Basis,
    /// Row-major `Â`.
    pub a_hat: Vec<Vec<f64>>,
    pub b_hat: Vec<f64>,
    pub min_eig_a_hat: f64,
    pub max_eig_a_hat: f64,
    /// Eigen-directions of `Â` dropped by the pseudo-inverse.
    pub truncated: usize,
    pub used_pseudo_inverse: bool,
    pub method: Method,
    pub n: usize,
}

impl SievePolicyEstimate {
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let d = self.b_hat.len();
        DMatrix::from_fn(d, d, |i, j| self.a_hat[i][j])
    }

    /// Untrimmed value `β̂'p(w)`.
    pub fn raw(&self, w: &[f64]) -> Result<f64> {
        let p = self.basis.evaluate(w)?.values;
        Ok(p.iter().zip(&self.beta_hat).map(|(a, b)| a * b).sum())
    }

    /// `‖B̂ − Âβ̂‖`, the first-order condition of the least-squares problem.
    pub fn foc_residual(&self) -> f64 {
        let beta = DVector::from_column_slice(&self.beta_hat);
        (DVector::from_column_slice(&self.b_hat) - self.a_matrix() * beta).norm()
    }

    pub fn condition(&self) -> f64 {
        let (lo, hi) = (self.min_eig_a_hat, self.max_eig_a_hat);
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }

    pub fn trimmed(&self) -> TrimmedPolicy {
        TrimmedPolicy { inner: self.clone() }
    }
}

/// A sieve fit clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimmedPolicy {
    pub inner: SievePolicyEstimate,
}

impl TrimmedPolicy {
    pub fn evaluate(&self, w: &[f64]) -> Result<f64> {
        Ok(clamp_unit(self.inner.raw(w)?))
    }
}

#[inline]
pub fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub fn trim(estimate: &SievePolicyEstimate) -> TrimmedPolicy {
    estimate.trimmed()
}

/// Weighted least squares on a precomputed basis matrix.
pub fn estimate_on_basis(basis: &Basis, matrix: &BasisMatrix, xi: &[f64], tau: &[f64], method: Method) -> Result<SievePolicyEstimate> {
    let n = matrix.rows.len();
    if xi.len() != n || tau.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: xi.len().min(tau.len()),
        });
    }
    if n == 0 {
        return Err(Error::InvalidSimulation("no rows to estimate from".into()));
    }
    let target: Vec<f64> = xi.iter().zip(tau).map(|(x, &t)| x * treat_indicator(t)).collect();
    let (a, b) = weighted_moments(&matrix.rows, xi, &target, n as f64);
    let sol = sym_pinv_solve(&a, &b, PINV_RCOND);
    let cond = sol.condition();
    Ok(SievePolicyEstimate {
        beta_hat: sol.solution.iter().copied().collect(),
        basis: basis.clone(),
        a_hat: (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect(),
        b_hat: b.iter().copied().collect(),
        min_eig_a_hat: sol.min_eig,
        max_eig_a_hat: sol.max_eig,
        truncated: sol.truncated,
        used_pseudo_inverse: sol.truncated > 0 || !(cond <= COND_LIMIT),
        method,
        n,
    })
}

/// `β̂ = Â⁻B̂` with the debiased weights.
pub fn estimate_debiased(data: &Dataset, basis: &BasisSpec, weights: &DebiasedWeights) -> Result<SievePolicyEstimate> {
    check_len(data, weights)?;
    let (basis, matrix) = build_basis(basis, &data.w_rows())?;
    estimate_on_basis(&basis, &matrix, &weights.xi_hat, &weights.tau_hat, Method::Debiased)
}

/// The plug-in estimator with weights `τ̂ᵢ²`.
pub fn estimate_plugin(data: &Dataset, basis: &BasisSpec, tau_hat: &[f64]) -> Result<SievePolicyEstimate> {
    if tau_hat.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: tau_hat.len(),
        });
    }
    let (basis, matrix) = build_basis(basis, &data.w_rows())?;
    let xi: Vec<f64> = tau_hat.iter().map(|t| t * t).collect();
    estimate_on_basis(&basis, &matrix, &xi, tau_hat, Method::Plugin)
}

fn check_len(data: &Dataset, weights: &DebiasedWeights) -> Result<()> {
    if weights.n() != data.n() || weights.tau_hat.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: weights.n(),
        });
    }
    Ok(())
}

/// Empirical restricted rule per group: `1{Σ_{i∈g} ξ̂ᵢ sgn(τ̂ᵢ) ≥ 0}`.
pub fn estimate_restricted(weights: &DebiasedWeights, group_of: &[usize], n_groups: usize) -> Result<Vec<u8>> {
    if group_of.len() != weights.n() {
        return Err(Error::DimensionMismatch {
            expected: weights.n(),
            found: group_of.len(),
        });
    }
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (i, &g) in group_of.iter().enumerate() {
        if g >= n_groups {
            return Err(Error::UnknownGroup(g.to_string()));
        }
        sum[g] += weights.xi_hat[i] * sgn(weights.tau_hat[i]);
        count[g] += 1;
    }
    (0..n_groups)
        .map(|g| {
            if count[g] == 0 {
                Err(Error::EmptyGroup(g))
            } else {
                Ok(u8::from(sum[g] / count[g] as f64 >= 0.0))
            }
        })
        .collect()
}

/// Cell of every row under a bracket basis.
pub fn bracket_groups(data: &Dataset, basis: &Basis) -> Result<Vec<usize>> {
    let b = basis.as_bracket().ok_or(Error::UnsupportedBasis)?;
    Ok(data.w_rows().iter().map(|w| b.cell_of(w)).collect())
}

/// Capacity-constrained fit on a bracket basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub basis: Basis,
    /// Untrimmed per-cell fractions.
    pub delta: Vec<f64>,
    pub lambda: f64,
    pub binding: bool,
    pub t: f64,
    pub weights_used: Method,
    pub cell_counts: Vec<usize>,
    /// Some cell exceeded 1 before clamping.
    pub exceeded_one: bool,
    pub kkt_residual: f64,
    pub warnings: Vec<String>,
}

impl CapacityEstimate {
    pub fn trimmed(&self) -> Vec<f64> {
        self.delta.iter().map(|&d| clamp_unit(d)).collect()
    }
}

/// `min Σ p_j(a_j δ_j² − 2 b_j δ_j)` subject to `Σ p_j δ_j ≤ t`, `δ ≥ 0`,
/// solved by the active-set iteration: start from every cell with a
/// positive target, compute the multiplier that exhausts capacity, drop
/// cells pushed below zero, repeat. Cells with `a_j ≤ 0` must be excluded
/// by the caller (they get `δ_j = 0`).
pub fn water_fill(p: &[f64], a: &[f64], b: &[f64], t: f64) -> (Vec<f64>, f64) {
    let j = p.len();
    let usable = |k: usize| a[k] > 0.0 && p[k] > 0.0;
    let free: Vec<f64> = (0..j).map(|k| if usable(k) { (b[k] / a[k]).max(0.0) } else { 0.0 }).collect();
    let load: f64 = (0..j).map(|k| p[k] * free[k]).sum();
    if load <= t {
        return (free, 0.0);
    }
    let mut active: Vec<usize> = (0..j).filter(|&k| usable(k) && b[k] > 0.0).collect();
    let mut lambda = 0.0;
    loop {
        let s1: f64 = active.iter().map(|&k| p[k] * b[k] / a[k]).sum();
        let s2: f64 = active.iter().map(|&k| p[k] / (2.0 * a[k])).sum();
        lambda = ((s1 - t) / s2).max(lambda);
        let before = active.len();
        active.retain(|&k| b[k] - lambda / 2.0 >= 0.0);
        if active.len() == before {
            break;
        }
    }
    let mut delta = vec![0.0; j];
    for &k in &active {
        delta[k] = ((b[k] - lambda / 2.0) / a[k]).max(0.0);
    }
    (delta, lambda)
}

/// Largest KKT violation of `(δ, λ)` for the cell program, scaled per cell
/// by `p_j`.
pub fn water_fill_kkt(p: &[f64], a: &[f64], b: &[f64], t: f64, delta: &[f64], lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    let mut load = 0.0;
    for k in 0..p.len() {
        if !(a[k] > 0.0 && p[k] > 0.0) {
            continue;
        }
        let h = 2.0 * p[k] * (a[k] * delta[k] - b[k]) + lambda * p[k];
        if delta[k] > 0.0 {
            worst = worst.max(h.abs());
        } else {
            worst = worst.max((-h).max(0.0));
        }
        load += p[k] * delta[k];
    }
    worst = worst.max(load - t);
    if lambda > 0.0 {
        worst = worst.max((lambda * (load - t)).abs());
    }
    worst.max(-lambda)
}

/// The empirical capacity-constrained program on a bracket basis. When a
/// cell's summed debiased weight is not positive the program is not
/// convex, and the plug-in weights `τ̂²` are used instead with a warning.
pub fn estimate_capacity_constrained(
    data: &Dataset,
    basis: &BasisSpec,
    weights: &DebiasedWeights,
    t: f64,
) -> Result<CapacityEstimate> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InfeasibleCapacity(t));
    }
    check_len(data, weights)?;
    if !basis.is_bracket() {
        return Err(Error::UnsupportedBasis);
    }
    let basis = basis.resolve(&data.w_rows())?;
    let groups = bracket_groups(data, &basis)?;
    let cells = basis.dim();
    let n = data.n() as f64;
    let moments = |xi: &dyn Fn(usize) -> f64| {
        let mut a = vec![0.0; cells];
        let mut b = vec![0.0; cells];
        let mut c = vec![0usize; cells];
        for (i, &g) in groups.iter().enumerate() {
            a[g] += xi(i);
            b[g] += xi(i) * treat_indicator(weights.tau_hat[i]);
            c[g] += 1;
        }
        for g in 0..cells {
            if c[g] > 0 {
                a[g] /= c[g] as f64;
                b[g] /= c[g] as f64;
            }
        }
        (a, b, c)
    };
    let mut warnings = Vec::new();
    let (mut a, mut b, counts) = moments(&|i| weights.xi_hat[i]);
    let mut used = Method::Debiased;
    if (0..cells).any(|g| counts[g] > 0 && a[g] <= 0.0) {
        warnings.push("non-positive summed debiased weight in a cell; the constrained program was solved with plug-in weights".into());
        let (pa, pb, _) = moments(&|i| weights.tau_hat[i].powi(2));
        a = pa;
        b = pb;
        used = Method::Plugin;
    }
    if counts.contains(&0) {
        warnings.push(format!("{} empty cell(s) assigned zero", counts.iter().filter(|&&c| c == 0).count()));
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let (delta, lambda) = water_fill(&p, &a, &b, t);
    let kkt_residual = water_fill_kkt(&p, &a, &b, t, &delta, lambda);
    let scale = 1.0 + a.iter().chain(&b).fold(0.0f64, |m, v| m.max(v.abs()));
    if kkt_residual > CAPACITY_KKT_TOL * scale {
        return Err(Error::KktViolation(format!("empirical capacity program residual {kkt_residual:e}")));
    }
    let exceeded_one = delta.iter().any(|&d| d > 1.0);
    if exceeded_one {
        warnings.push("some cell fraction exceeded 1 and is clamped".into());
    }
    Ok(CapacityEstimate {
        basis,
        delta,
        lambda,
        binding: lambda > 0.0,
        t,
        weights_used: used,
        cell_counts: counts,
        exceeded_one,
        kkt_residual,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub min_eig: f64,
    pub max_eig: f64,
    pub condition: f64,
    pub negative_xi_fraction: f64,
    pub used_pseudo_inverse: bool,
    pub truncated: usize,
    pub warning: Option<String>,
}

pub fn conditioning_report(estimate: &SievePolicyEstimate, weights: &DebiasedWeights, eps: f64) -> ConditioningReport {
    let mut notes = Vec::new();
    if estimate.min_eig_a_hat < eps {
        notes.push(format!("smallest eigenvalue of A_hat is {:e} (< {eps:e})", estimate.min_eig_a_hat));
    }
    if estimate.used_pseudo_inverse {
        notes.push(if estimate.truncated > 0 {
            format!("solved by pseudo-inverse with {} direction(s) dropped", estimate.truncated)
        } else {
            "A_hat is not positive definite; solved by pseudo-inverse".to_string()
        });
    }
    ConditioningReport {
        min_eig: estimate.min_eig_a_hat,
        max_eig: estimate.max_eig_a_hat,
        condition: estimate.condition(),
        negative_xi_fraction: weights.diagnostics.negative_fraction,
        used_pseudo_inverse: estimate.used_pseudo_inverse,
        truncated: estimate.truncated,
        warning: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

#[cfg(test)]
mod tests;
