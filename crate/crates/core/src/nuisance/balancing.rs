//! Minimum-distance balancing weights with a Tikhonov penalty.
//!
//! For an arm with Gram `G = mean[D b b']` and target `P = mean[2(γ̂₁−γ̂₀) b]`
//! the coefficient is `a = (GG + λG)⁻ GP`, and `ω(x) = a'b(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::learner::FeatureMap;
use crate::basis::{Basis, BasisSpec};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, weighted_moments, COND_LIMIT, PINV_RCOND};

/// Basis `b(x)` for the balancing problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BalancingBasis {
    /// An intercept plus standardized learner features.
    Features {
        #[serde(default)]
        feature_map: FeatureMap,
    },
    /// A spline or bracket basis over every covariate in `X`.
    Sieve { spec: BasisSpec },
}

impl Default for BalancingBasis {
    fn default() -> Self {
        BalancingBasis::Features {
            feature_map: FeatureMap::Raw,
        }
    }
}

/// `{0.1, 0.2, …, 5.0}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 10.0).collect()
}

fn default_cv_folds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancingSpec {
    #[serde(default)]
    pub basis: BalancingBasis,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

impl Default for BalancingSpec {
    fn default() -> Self {
        Self {
            basis: BalancingBasis::default(),
            lambda_grid: default_lambda_grid(),
            cv_folds: default_cv_folds(),
        }
    }
}

impl BalancingSpec {
    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.lambda_grid = grid;
        self
    }

    pub fn validate(&self, dim_x: usize) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidLearner("balancing lambda grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidLearner("balancing lambdas must be finite and >= 0".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidLearner("balancing lambda grid must be strictly ascending".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidLearner(format!("balancing cv_folds must be >= 2, found {}", self.cv_folds)));
        }
        if let BalancingBasis::Sieve { spec } = &self.basis {
            if spec.input_dim() != dim_x {
                return Err(Error::DimensionMismatch {
                    expected: dim_x,
                    found: spec.input_dim(),
                });
            }
        }
        Ok(())
    }
}

/// A balancing basis fixed on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalancingFeatures {
    Standardized {
        feature_map: FeatureMap,
        mean: Vec<f64>,
        /// Zero marks a column dropped for lack of spread.
        scale: Vec<f64>,
    },
    Sieve { basis: Basis },
}

impl BalancingFeatures {
    pub fn resolve(spec: &BalancingBasis, xs: &[&[f64]]) -> Result<Self> {
        match spec {
            BalancingBasis::Features { feature_map } => {
                let feats: Vec<Vec<f64>> = xs.iter().map(|x| feature_map.apply(x)).collect();
                let p = feature_map.dim(xs.first().map_or(0, |x| x.len()));
                let m = feats.len().max(1) as f64;
                let mut mean = vec![0.0; p];
                for f in &feats {
                    for (a, v) in mean.iter_mut().zip(f) {
                        *a += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                let mut scale = vec![0.0; p];
                for f in &feats {
                    for j in 0..p {
                        scale[j] += (f[j] - mean[j]).powi(2);
                    }
                }
                for j in 0..p {
                    let s = (scale[j] / m).sqrt();
                    scale[j] = if s > 1e-12 * (1.0 + mean[j].abs()) { s } else { 0.0 };
                }
                Ok(BalancingFeatures::Standardized {
                    feature_map: *feature_map,
                    mean,
                    scale,
                })
            }
            BalancingBasis::Sieve { spec } => {
                let rows: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
                Ok(BalancingFeatures::Sieve {
                    basis: spec.resolve(&rows)?,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BalancingFeatures::Standardized { scale, .. } => 1 + scale.iter().filter(|&&s| s > 0.0).count(),
            BalancingFeatures::Sieve { basis } => basis.dim(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            BalancingFeatures::Standardized {
                feature_map,
                mean,
                scale,
            } => {
                let f = feature_map.apply(x);
                let mut out = Vec::with_capacity(self.dim());
                out.push(1.0);
                for j in 0..f.len() {
                    if scale[j] > 0.0 {
                        out.push((f[j] - mean[j]) / scale[j]);
                    }
                }
                Ok(out)
            }
            BalancingFeatures::Sieve { basis } => Ok(basis.evaluate(x)?.values),
        }
    }
}

/// The spectral form of one arm's Gram matrix, reusable across `λ`.
pub(crate) struct ArmSystem {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    /// `V'P`.
    target: DVector<f64>,
    pub(crate) condition: f64,
}

impl ArmSystem {
    fn new(gram: &DMatrix<f64>, p: &DVector<f64>) -> Self {
        let eig = sym_eigen(gram);
        let target = eig.eigenvectors.transpose() * p;
        let hi = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lo = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
            target,
            condition,
        }
    }

    /// `(GG + λG)⁻ GP` with eigenvalues of `GG + λG` below
    /// `PINV_RCOND · max` treated as zero. Returns the solution and whether
    /// any direction was dropped.
    pub(crate) fn solve(&self, lambda: f64) -> (Vec<f64>, bool) {
        let m: Vec<f64> = self.values.iter().map(|&mu| mu * mu + lambda * mu).collect();
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut dropped = false;
        let coords = DVector::from_iterator(
            m.len(),
            m.iter().zip(self.values.iter()).zip(self.target.iter()).map(|((&mi, &mu), &c)| {
                if scale > 0.0 && mi.abs() > PINV_RCOND * scale {
                    mu * c / mi
                } else {
                    dropped = true;
                    0.0
                }
            }),
        );
        let a = &self.vectors * coords;
        (a.iter().copied().collect(), dropped)
    }

    pub(crate) fn flagged(&self) -> bool {
        !(self.condition <= COND_LIMIT)
    }
}

/// Gram matrices for both arms and the shared target on a training set.
/// Every moment is divided by the full training-set size.
pub(crate) struct BalanceSystem {
    pub(crate) arm1: ArmSystem,
    pub(crate) arm0: ArmSystem,
}

impl BalanceSystem {
    pub(crate) fn new(b_rows: &[Vec<f64>], treated: &[bool], two_tau: &[f64]) -> Self {
        let m = b_rows.len() as f64;
        let d1: Vec<f64> = treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let d0: Vec<f64> = d1.iter().map(|d| 1.0 - d).collect();
        let (g1, p) = weighted_moments(b_rows, &d1, two_tau, m);
        let (g0, _) = weighted_moments(b_rows, &d0, two_tau, m);
        Self {
            arm1: ArmSystem::new(&g1, &p),
            arm0: ArmSystem::new(&g0, &p),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
