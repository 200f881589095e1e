//! Cross-fitted nuisance estimation and the debiased weights
//! `ξ̂ = τ̂² + Dω̂₁(Y − γ̂₁) − (1 − D)ω̂₀(Y − γ̂₀)`.
//!
//! Every model used for a row of fold `k` is trained on rows outside `k`.

pub mod balancing;
pub mod learner;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_subset, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::rng::derive_seed_path;
use balancing::{dot, BalanceSystem, BalancingFeatures, BalancingSpec};
use learner::{argmin_first, fit_linear, LinearModel, OutcomeLearnerSpec};

pub use balancing::{default_lambda_grid, BalancingBasis};
pub use learner::{FeatureMap, LearnerKind};

/// How `ω₁, ω₀` are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightSpec {
    Balancing(BalancingSpec),
    /// `ω₁ = 2τ̂/π`, `ω₀ = 2τ̂/(1 − π)` with a known constant propensity.
    KnownPropensity { pi: f64 },
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Balancing(BalancingSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpec {
    pub outcome: OutcomeLearnerSpec,
    #[serde(default)]
    pub weights: WeightSpec,
}

impl NuisanceSpec {
    pub fn validate(&self, dim_x: usize) -> Result<()> {
        self.outcome.validate()?;
        match &self.weights {
            WeightSpec::Balancing(b) => b.validate(dim_x),
            WeightSpec::KnownPropensity { pi } if !(*pi > 0.0 && *pi < 1.0) => Err(Error::InvalidLearner(format!(
                "known propensity must lie in (0, 1), found {pi}"
            ))),
            WeightSpec::KnownPropensity { .. } => Ok(()),
        }
    }
}

/// Outcome regressions trained on the complement of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub gamma1: LinearModel,
    pub gamma0: LinearModel,
}

impl OutcomeFit {
    pub fn tau(&self, x: &[f64]) -> f64 {
        self.gamma1.predict(x) - self.gamma0.predict(x)
    }
}

/// Balancing coefficients for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingFit {
    pub features: BalancingFeatures,
    pub a1: Vec<f64>,
    pub a0: Vec<f64>,
    pub lambda1: f64,
    pub lambda0: f64,
    /// Total CV criterion per grid value (empty for a singleton grid).
    #[serde(default)]
    pub tcv1: Vec<f64>,
    #[serde(default)]
    pub tcv0: Vec<f64>,
    pub cond_g1: f64,
    pub cond_g0: f64,
    /// A Gram matrix was ill-conditioned or a direction was dropped.
    pub pseudo_inverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OmegaModel {
    Balancing(BalancingFit),
    KnownPropensity { pi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldNuisance {
    pub outcome: OutcomeFit,
    pub omega: OmegaModel,
}

impl FoldNuisance {
    /// `(γ̂₁, γ̂₀, ω̂₁, ω̂₀)` at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<[f64; 4]> {
        let g1 = self.outcome.gamma1.predict(x);
        let g0 = self.outcome.gamma0.predict(x);
        let (w1, w0) = match &self.omega {
            OmegaModel::KnownPropensity { pi } => (2.0 * (g1 - g0) / pi, 2.0 * (g1 - g0) / (1.0 - pi)),
            OmegaModel::Balancing(fit) => {
                let b = fit.features.eval(x)?;
                (dot(&fit.a1, &b), dot(&fit.a0, &b))
            }
        };
        Ok([g1, g0, w1, w0])
    }
}

/// All per-fold nuisance models plus the fold assignment they respect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub folds: FoldAssignment,
    pub per_fold: Vec<FoldNuisance>,
}

impl NuisanceFit {
    pub fn selected_lambdas(&self) -> Vec<Option<(f64, f64)>> {
        self.per_fold
            .iter()
            .map(|f| match &f.omega {
                OmegaModel::Balancing(b) => Some((b.lambda1, b.lambda0)),
                OmegaModel::KnownPropensity { .. } => None,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("nuisance fit serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub negative_fraction: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedWeights {
    pub xi_hat: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub diagnostics: WeightDiagnostics,
}

impl DebiasedWeights {
    pub fn from_parts(tau_hat: Vec<f64>, xi_hat: Vec<f64>) -> Result<Self> {
        if tau_hat.len() != xi_hat.len() {
            return Err(Error::DimensionMismatch {
                expected: tau_hat.len(),
                found: xi_hat.len(),
            });
        }
        let n = xi_hat.len().max(1) as f64;
        let diagnostics = WeightDiagnostics {
            negative_fraction: xi_hat.iter().filter(|&&v| v < 0.0).count() as f64 / n,
            min: xi_hat.iter().copied().fold(f64::INFINITY, f64::min),
            max: xi_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        Ok(Self {
            xi_hat,
            tau_hat,
            diagnostics,
        })
    }

    /// Plug-in weights `ξ̂ᵢ = τ̂ᵢ²`.
    pub fn plugin(tau_hat: Vec<f64>) -> Self {
        let xi = tau_hat.iter().map(|t| t * t).collect();
        Self::from_parts(tau_hat, xi).expect("equal lengths")
    }

    pub fn n(&self) -> usize {
        self.xi_hat.len()
    }
}

/// One debiased weight from its ingredients.
pub fn debiased_weight(y: f64, treated: bool, g1: f64, g0: f64, w1: f64, w0: f64) -> f64 {
    let tau = g1 - g0;
    let correction = if treated { w1 * (y - g1) } else { -w0 * (y - g0) };
    tau * tau + correction
}

const ARM_NAMES: [&str; 2] = ["control", "treated"];

fn fit_arm(
    data: &Dataset,
    rows: &[usize],
    treated: bool,
    spec: &OutcomeLearnerSpec,
    seed: u64,
    fold: usize,
) -> Result<LinearModel> {
    let arm: Vec<usize> = rows.iter().copied().filter(|&i| data.sample(i).treated == treated).collect();
    if arm.len() < spec.min_rows(data.dim_x()) {
        return Err(Error::InsufficientArm {
            fold,
            arm: ARM_NAMES[usize::from(treated)],
        });
    }
    let xs: Vec<&[f64]> = arm.iter().map(|&i| data.sample(i).x.as_slice()).collect();
    let ys: Vec<f64> = arm.iter().map(|&i| data.sample(i).y).collect();
    fit_linear(spec, &xs, &ys, seed)
}

fn fit_outcome_on(data: &Dataset, rows: &[usize], spec: &OutcomeLearnerSpec, seed: u64, fold: usize) -> Result<OutcomeFit> {
    Ok(OutcomeFit {
        gamma1: fit_arm(data, rows, true, spec, derive_seed_path(seed, &[1]), fold)?,
        gamma0: fit_arm(data, rows, false, spec, derive_seed_path(seed, &[0]), fold)?,
    })
}

fn check_folds(data: &Dataset, folds: &FoldAssignment) -> Result<()> {
    if folds.n() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: folds.n(),
        });
    }
    Ok(())
}

/// `γ̂₁ᵏ, γ̂₀ᵏ` for every fold, each fitted on the fold complement.
pub fn fit_outcome_regressions(
    data: &Dataset,
    folds: &FoldAssignment,
    spec: &OutcomeLearnerSpec,
    seed: u64,
) -> Result<Vec<OutcomeFit>> {
    check_folds(data, folds)?;
    spec.validate()?;
    (0..folds.k_folds)
        .into_par_iter()
        .map(|k| fit_outcome_on(data, &folds.complement(k), spec, derive_seed_path(seed, &[1, k as u64]), k))
        .collect()
}

fn resolve_features(data: &Dataset, rows: &[usize], spec: &BalancingSpec) -> Result<(BalancingFeatures, Vec<Vec<f64>>)> {
    let xs: Vec<&[f64]> = rows.iter().map(|&i| data.sample(i).x.as_slice()).collect();
    let features = BalancingFeatures::resolve(&spec.basis, &xs)?;
    let b = xs.iter().map(|x| features.eval(x)).collect::<Result<Vec<_>>>()?;
    Ok((features, b))
}

fn two_tau(data: &Dataset, rows: &[usize], fit: &OutcomeFit) -> Vec<f64> {
    rows.iter().map(|&i| 2.0 * fit.tau(&data.sample(i).x)).collect()
}

/// Total held-out criteria `(TCV₁(λ), TCV₀(λ))` over inner folds of `rows`,
/// refitting the outcome learner without each inner fold.
pub fn cv_select_lambda(
    data: &Dataset,
    rows: &[usize],
    spec: &BalancingSpec,
    outcome: &OutcomeLearnerSpec,
    seed: u64,
    fold: usize,
) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    let grid = &spec.lambda_grid;
    if grid.len() == 1 {
        return Ok((0, 0, Vec::new(), Vec::new()));
    }
    let inner = partition_subset(rows, spec.cv_folds, derive_seed_path(seed, &[2]))?;
    let per_inner = (0..spec.cv_folds)
        .into_par_iter()
        .map(|j| -> Result<(Vec<f64>, Vec<f64>)> {
            let held = &inner[j];
            let mut train: Vec<usize> =
                (0..spec.cv_folds).filter(|&l| l != j).flat_map(|l| inner[l].iter().copied()).collect();
            train.sort_unstable();
            let fit = fit_outcome_on(data, &train, outcome, derive_seed_path(seed, &[3, j as u64]), fold)?;
            let (features, b) = resolve_features(data, &train, spec)?;
            let treated: Vec<bool> = train.iter().map(|&i| data.sample(i).treated).collect();
            let sys = BalanceSystem::new(&b, &treated, &two_tau(data, &train, &fit));
            let held_rows = held
                .iter()
                .map(|&i| {
                    let s = data.sample(i);
                    let g1 = fit.gamma1.predict(&s.x);
                    let g0 = fit.gamma0.predict(&s.x);
                    Ok((features.eval(&s.x)?, s.d(), s.y, g1, g0))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut cv1 = Vec::with_capacity(grid.len());
            let mut cv0 = Vec::with_capacity(grid.len());
            for &lambda in grid {
                let (a1, _) = sys.arm1.solve(lambda);
                let (a0, _) = sys.arm0.solve(lambda);
                let mut e1 = 0.0;
                let mut e0 = 0.0;
                for (bx, d, y, g1, g0) in &held_rows {
                    let tt = 2.0 * (g1 - g0);
                    e1 += (d * dot(&a1, bx) * y - tt * g1).powi(2);
                    e0 += ((1.0 - d) * dot(&a0, bx) * y - tt * g0).powi(2);
                }
                cv1.push(e1);
                cv0.push(e0);
            }
            Ok((cv1, cv0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tcv1 = vec![0.0; grid.len()];
    let mut tcv0 = vec![0.0; grid.len()];
    for (c1, c0) in &per_inner {
        for g in 0..grid.len() {
            tcv1[g] += c1[g];
            tcv0[g] += c0[g];
        }
    }
    Ok((argmin_first(&tcv1), argmin_first(&tcv0), tcv1, tcv0))
}

fn fit_fold_balancing(
    data: &Dataset,
    rows: &[usize],
    spec: &BalancingSpec,
    outcome_spec: &OutcomeLearnerSpec,
    outcome: &OutcomeFit,
    seed: u64,
    fold: usize,
) -> Result<BalancingFit> {
    let (i1, i0, tcv1, tcv0) = cv_select_lambda(data, rows, spec, outcome_spec, seed, fold)?;
    let (features, b) = resolve_features(data, rows, spec)?;
    let treated: Vec<bool> = rows.iter().map(|&i| data.sample(i).treated).collect();
    let sys = BalanceSystem::new(&b, &treated, &two_tau(data, rows, outcome));
    let lambda1 = spec.lambda_grid[i1];
    let lambda0 = spec.lambda_grid[i0];
    let (a1, drop1) = sys.arm1.solve(lambda1);
    let (a0, drop0) = sys.arm0.solve(lambda0);
    Ok(BalancingFit {
        features,
        a1,
        a0,
        lambda1,
        lambda0,
        tcv1,
        tcv0,
        cond_g1: sys.arm1.condition,
        cond_g0: sys.arm0.condition,
        pseudo_inverse: drop1 || drop0 || sys.arm1.flagged() || sys.arm0.flagged(),
    })
}

/// Balancing coefficients `â₁ᵏ, â₀ᵏ` for every fold, with `λ` picked per
/// fold by the inner CV criterion.
pub fn fit_balancing_weights(
    data: &Dataset,
    folds: &FoldAssignment,
    spec: &BalancingSpec,
    outcome_spec: &OutcomeLearnerSpec,
    outcomes: &[OutcomeFit],
    seed: u64,
) -> Result<Vec<BalancingFit>> {
    check_folds(data, folds)?;
    spec.validate(data.dim_x())?;
    if outcomes.len() != folds.k_folds {
        return Err(Error::DimensionMismatch {
            expected: folds.k_folds,
            found: outcomes.len(),
        });
    }
    (0..folds.k_folds)
        .into_par_iter()
        .map(|k| {
            fit_fold_balancing(
                data,
                &folds.complement(k),
                spec,
                outcome_spec,
                &outcomes[k],
                derive_seed_path(seed, &[2, k as u64]),
                k,
            )
        })
        .collect()
}

/// Full cross-fitted nuisance estimation.
pub fn fit_nuisance(data: &Dataset, folds: &FoldAssignment, spec: &NuisanceSpec, seed: u64) -> Result<NuisanceFit> {
    spec.validate(data.dim_x())?;
    let outcomes = fit_outcome_regressions(data, folds, &spec.outcome, seed)?;
    let omegas: Vec<OmegaModel> = match &spec.weights {
        WeightSpec::KnownPropensity { pi } => vec![OmegaModel::KnownPropensity { pi: *pi }; folds.k_folds],
        WeightSpec::Balancing(b) => fit_balancing_weights(data, folds, b, &spec.outcome, &outcomes, seed)?
            .into_iter()
            .map(OmegaModel::Balancing)
            .collect(),
    };
    Ok(NuisanceFit {
        folds: folds.clone(),
        per_fold: outcomes
            .into_iter()
            .zip(omegas)
            .map(|(outcome, omega)| FoldNuisance { outcome, omega })
            .collect(),
    })
}

/// `τ̂ᵢ` and `ξ̂ᵢ` for every row from the models of the row's own fold.
pub fn compute_debiased_weights(data: &Dataset, fit: &NuisanceFit) -> Result<DebiasedWeights> {
    check_folds(data, &fit.folds)?;
    let parts = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let s = data.sample(i);
            let [g1, g0, w1, w0] = fit.per_fold[fit.folds.fold_of[i]].eval(&s.x)?;
            Ok((g1 - g0, debiased_weight(s.y, s.treated, g1, g0, w1, w0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (tau, xi) = parts.into_iter().unzip();
    DebiasedWeights::from_parts(tau, xi)
}
