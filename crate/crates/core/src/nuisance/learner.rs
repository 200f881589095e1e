//! Linear outcome learners: OLS, ridge and lasso on standardized features,
//! with the penalty chosen by K-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::partition_folds;
use crate::error::{Error, Result};
use crate::linalg::{sym_pinv_solve, weighted_moments, PINV_RCOND};

/// Coordinate-descent stopping rule on the sup-norm coefficient change.
pub const LASSO_TOL: f64 = 1e-7;
const LASSO_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ols,
    Ridge,
    Lasso,
}

/// Expansion of the raw covariates fed to a linear learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Raw,
    /// Raw terms followed by every product `x_j x_l` with `j ≤ l`.
    InteractionsSquares,
}

impl FeatureMap {
    pub fn dim(&self, p: usize) -> usize {
        match self {
            FeatureMap::Raw => p,
            FeatureMap::InteractionsSquares => p + p * (p + 1) / 2,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Raw => x.to_vec(),
            FeatureMap::InteractionsSquares => {
                let p = x.len();
                let mut out = Vec::with_capacity(self.dim(p));
                out.extend_from_slice(x);
                for j in 0..p {
                    for l in j..p {
                        out.push(x[j] * x[l]);
                    }
                }
                out
            }
        }
    }
}

fn default_cv_folds() -> usize {
    10
}

/// `10^{-4}, 10^{-3.75}, …, 1`.
pub fn default_penalty_grid() -> Vec<f64> {
    (0..=16).map(|i| 10f64.powf(-4.0 + 0.25 * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeLearnerSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub feature_map: FeatureMap,
    /// Penalty candidates; ignored by OLS. Lasso penalties are multiples of
    /// the outcome standard deviation. Empty means the default grid.
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

impl OutcomeLearnerSpec {
    pub fn ols() -> Self {
        Self {
            kind: LearnerKind::Ols,
            feature_map: FeatureMap::Raw,
            grid: Vec::new(),
            cv_folds: default_cv_folds(),
        }
    }

    pub fn lasso(grid: Vec<f64>) -> Self {
        Self {
            kind: LearnerKind::Lasso,
            grid,
            ..Self::ols()
        }
    }

    pub fn ridge(grid: Vec<f64>) -> Self {
        Self {
            kind: LearnerKind::Ridge,
            grid,
            ..Self::ols()
        }
    }

    pub fn with_features(mut self, feature_map: FeatureMap) -> Self {
        self.feature_map = feature_map;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidLearner("penalty grid values must be finite and >= 0".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidLearner(format!("cv_folds must be >= 2, found {}", self.cv_folds)));
        }
        Ok(())
    }

    /// Sorted, de-duplicated penalty candidates.
    pub fn penalties(&self) -> Vec<f64> {
        if self.kind == LearnerKind::Ols {
            return vec![0.0];
        }
        let mut g = if self.grid.is_empty() { default_penalty_grid() } else { self.grid.clone() };
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    /// Fewest rows an arm must contain for this learner on `p` raw covariates.
    pub fn min_rows(&self, p: usize) -> usize {
        match self.kind {
            LearnerKind::Ols => self.feature_map.dim(p) + 1,
            _ => 2,
        }
    }
}

/// A fitted linear predictor on the original covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_map: FeatureMap,
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub penalty: f64,
    /// Total held-out squared error per candidate penalty (empty if no CV ran).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cv_error: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let f = self.feature_map.apply(x);
        self.intercept + f.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Standardized sufficient statistics of a design.
struct Design {
    mean: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    y_mean: f64,
    /// Outcome standard deviation; lasso penalties are relative to it.
    y_scale: f64,
}

impl Design {
    fn new(features: &[Vec<f64>], ys: &[f64]) -> Self {
        let m = features.len();
        let p = features.first().map_or(0, Vec::len);
        let mf = m as f64;
        let mut mean = vec![0.0; p];
        for f in features {
            for (acc, v) in mean.iter_mut().zip(f) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= mf);
        let mut var = vec![0.0; p];
        for f in features {
            for j in 0..p {
                let c = f[j] - mean[j];
                var[j] += c * c;
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| (v / mf).sqrt()).collect();
        let spread = |j: usize| scale[j] > 1e-12 * (1.0 + mean[j].abs());
        let active: Vec<usize> = (0..p).filter(|&j| spread(j)).collect();
        let y_mean = ys.iter().sum::<f64>() / mf;
        let z: Vec<Vec<f64>> = features
            .iter()
            .map(|f| active.iter().map(|&j| (f[j] - mean[j]) / scale[j]).collect())
            .collect();
        let yc: Vec<f64> = ys.iter().map(|y| y - y_mean).collect();
        let (gram, cross) = weighted_moments(&z, &vec![1.0; m], &yc, mf);
        let y_sd = (yc.iter().map(|v| v * v).sum::<f64>() / mf).sqrt();
        Self {
            mean,
            scale,
            active,
            gram,
            cross,
            y_mean,
            y_scale: if y_sd > 0.0 { y_sd } else { 1.0 },
        }
    }

    fn solve(&self, kind: LearnerKind, penalty: f64, warm: Option<&DVector<f64>>) -> DVector<f64> {
        let q = self.active.len();
        if q == 0 {
            return DVector::zeros(0);
        }
        match kind {
            LearnerKind::Ols => sym_pinv_solve(&self.gram, &self.cross, PINV_RCOND).solution,
            LearnerKind::Ridge => {
                let a = &self.gram + DMatrix::identity(q, q) * penalty;
                sym_pinv_solve(&a, &self.cross, PINV_RCOND).solution
            }
            LearnerKind::Lasso if penalty == 0.0 => sym_pinv_solve(&self.gram, &self.cross, PINV_RCOND).solution,
            LearnerKind::Lasso => {
                let ys = self.y_scale;
                let warm = warm.map(|w| w / ys);
                lasso_cd(&self.gram, &(&self.cross / ys), penalty, warm.as_ref()) * ys
            }
        }
    }

    fn to_model(&self, b: &DVector<f64>, feature_map: FeatureMap, penalty: f64) -> LinearModel {
        let mut coef = vec![0.0; self.mean.len()];
        let mut intercept = self.y_mean;
        for (k, &j) in self.active.iter().enumerate() {
            coef[j] = b[k] / self.scale[j];
            intercept -= coef[j] * self.mean[j];
        }
        LinearModel {
            feature_map,
            intercept,
            coef,
            penalty,
            cv_error: Vec::new(),
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `½ b'Gb − c'b + λ‖b‖₁` with covariance
/// updates of the gradient.
fn lasso_cd(gram: &DMatrix<f64>, cross: &DVector<f64>, lambda: f64, warm: Option<&DVector<f64>>) -> DVector<f64> {
    let q = cross.len();
    let mut b = warm.cloned().unwrap_or_else(|| DVector::zeros(q));
    let mut r = cross - gram * &b;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_step = 0.0f64;
        for j in 0..q {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let z = r[j] + gjj * b[j];
            let new = soft_threshold(z, lambda) / gjj;
            let step = new - b[j];
            if step != 0.0 {
                for l in 0..q {
                    r[l] -= gram[(l, j)] * step;
                }
                b[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < LASSO_TOL {
            break;
        }
    }
    b
}

/// Fit one model per penalty, warm-starting the lasso from large to small.
pub fn coefficient_path(
    kind: LearnerKind,
    feature_map: FeatureMap,
    xs: &[&[f64]],
    ys: &[f64],
    penalties: &[f64],
) -> Vec<LinearModel> {
    let features: Vec<Vec<f64>> = xs.iter().map(|x| feature_map.apply(x)).collect();
    let design = Design::new(&features, ys);
    let mut order: Vec<usize> = (0..penalties.len()).collect();
    order.sort_by(|&i, &j| penalties[j].total_cmp(&penalties[i]));
    let mut out = vec![None; penalties.len()];
    let mut warm: Option<DVector<f64>> = None;
    for i in order {
        let b = design.solve(kind, penalties[i], warm.as_ref());
        out[i] = Some(design.to_model(&b, feature_map, penalties[i]));
        warm = Some(b);
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Fit the learner on `(xs, ys)`. With several penalty candidates the
/// penalty minimising held-out squared error over `cv_folds` folds is used,
/// ties going to the smallest penalty. Callers check [`OutcomeLearnerSpec::min_rows`].
pub fn fit_linear(spec: &OutcomeLearnerSpec, xs: &[&[f64]], ys: &[f64], seed: u64) -> Result<LinearModel> {
    let grid = spec.penalties();
    let m = xs.len();
    if m == 0 {
        return Err(Error::Numerical("cannot fit a learner on zero rows".into()));
    }
    let kf = spec.cv_folds.min(m / 2);
    if grid.len() == 1 || kf < 2 {
        let mut fit = coefficient_path(spec.kind, spec.feature_map, xs, ys, &grid[..1]);
        return Ok(fit.remove(0));
    }
    let folds = partition_folds(m, kf, seed)?;
    let mut sse = vec![0.0; grid.len()];
    for k in 0..kf {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| folds.fold_of[i] != k);
        let tx: Vec<&[f64]> = train.iter().map(|&i| xs[i]).collect();
        let ty: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
        let path = coefficient_path(spec.kind, spec.feature_map, &tx, &ty, &grid);
        for (g, model) in path.iter().enumerate() {
            sse[g] += test.iter().map(|&i| (ys[i] - model.predict(xs[i])).powi(2)).sum::<f64>();
        }
    }
    let best = argmin_first(&sse);
    let mut fit = coefficient_path(spec.kind, spec.feature_map, xs, ys, &grid[best..=best]).remove(0);
    fit.cv_error = sse;
    if !fit.intercept.is_finite() || fit.coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite learner coefficients".into()));
    }
    Ok(fit)
}

/// Index of the first minimum; NaN entries never win.
pub(crate) fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}
