//! Linear sieve bases for policy rules: clamped B-splines (tensor products
//! for several dimensions) and bracket indicators for discrete `W`.
//!
//! A [`BasisSpec`] is the user-facing description; resolving it against
//! data fixes the knots and yields a [`Basis`] that can be evaluated
//! anywhere and serialized alongside fitted coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    #[default]
    Quantile,
    Uniform,
}

fn default_degree() -> usize {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineDimSpec {
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Number of basis functions in this dimension.
    pub dof: usize,
    #[serde(default)]
    pub knots: KnotRule,
    /// Domain bounds; taken from the data range when absent.
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl SplineDimSpec {
    pub fn cubic(dof: usize) -> Self {
        Self {
            degree: 3,
            dof,
            knots: KnotRule::Quantile,
            lo: None,
            hi: None,
        }
    }

    pub fn uniform(degree: usize, dof: usize, lo: f64, hi: f64) -> Self {
        Self {
            degree,
            dof,
            knots: KnotRule::Uniform,
            lo: Some(lo),
            hi: Some(hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsplineSpec {
    pub dims: Vec<SplineDimSpec>,
    /// Clamp out-of-domain points to the boundary instead of failing.
    #[serde(default = "default_true")]
    pub clamp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketSpec {
    /// Strictly increasing cut points per dimension. Cell `j` of a
    /// dimension covers `(c_j, c_{j+1}]`.
    pub cuts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    Bspline(BsplineSpec),
    Bracket(BracketSpec),
}

impl BasisSpec {
    pub fn bspline(dims: Vec<SplineDimSpec>) -> Self {
        BasisSpec::Bspline(BsplineSpec { dims, clamp: true })
    }

    pub fn bracket(cuts: Vec<Vec<f64>>) -> Self {
        BasisSpec::Bracket(BracketSpec { cuts })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BasisSpec::Bspline(s) => s.dims.len(),
            BasisSpec::Bracket(s) => s.cuts.len(),
        }
    }

    pub fn is_bracket(&self) -> bool {
        matches!(self, BasisSpec::Bracket(_))
    }

    /// Fix knots (quantile rules need `w_values`) and validate.
    pub fn resolve(&self, w_values: &[Vec<f64>]) -> Result<Basis> {
        match self {
            BasisSpec::Bspline(spec) => {
                if spec.dims.is_empty() {
                    return Err(Error::InvalidBasis("no spline dimensions".into()));
                }
                let dims = spec
                    .dims
                    .iter()
                    .enumerate()
                    .map(|(j, d)| UnivariateBspline::resolve(j, d, w_values))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Basis::Bspline(TensorBspline {
                    dims,
                    clamp: spec.clamp,
                }))
            }
            BasisSpec::Bracket(spec) => {
                if spec.cuts.is_empty() {
                    return Err(Error::InvalidBasis("no bracket dimensions".into()));
                }
                for (j, c) in spec.cuts.iter().enumerate() {
                    if c.iter().any(|v| !v.is_finite()) || c.windows(2).any(|p| p[0] >= p[1]) {
                        return Err(Error::InvalidBasis(format!(
                            "bracket cuts in dimension {j} must be finite and strictly increasing"
                        )));
                    }
                }
                Ok(Basis::Bracket(BracketBasis {
                    cuts: spec.cuts.clone(),
                }))
            }
        }
    }
}

/// A clamped univariate B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateBspline {
    pub degree: usize,
    /// Full knot vector, boundary knots repeated `degree + 1` times.
    pub knots: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl UnivariateBspline {
    fn resolve(dim: usize, spec: &SplineDimSpec, w_values: &[Vec<f64>]) -> Result<Self> {
        let p = spec.degree;
        if spec.dof < p + 1 {
            return Err(Error::InvalidBasis(format!(
                "dimension {dim}: degrees of freedom {} below degree + 1 = {}",
                spec.dof,
                p + 1
            )));
        }
        let column = || -> Result<Vec<f64>> {
            let mut col = Vec::with_capacity(w_values.len());
            for row in w_values {
                let v = *row.get(dim).ok_or(Error::DimensionMismatch {
                    expected: dim + 1,
                    found: row.len(),
                })?;
                col.push(v);
            }
            if col.is_empty() {
                return Err(Error::InvalidBasis(format!(
                    "dimension {dim}: data required to place knots or bounds"
                )));
            }
            col.sort_by(f64::total_cmp);
            Ok(col)
        };
        let interior = spec.dof - p - 1;
        let needs_data = spec.lo.is_none()
            || spec.hi.is_none()
            || (spec.knots == KnotRule::Quantile && interior > 0);
        let sorted = if needs_data {
            Some(column()?)
        } else {
            None
        };
        let lo = spec.lo.unwrap_or_else(|| sorted.as_ref().unwrap()[0]);
        let hi = spec
            .hi
            .unwrap_or_else(|| *sorted.as_ref().unwrap().last().unwrap());
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidBasis(format!(
                "dimension {dim}: domain [{lo}, {hi}] is empty"
            )));
        }
        let inner: Vec<f64> = (1..=interior)
            .map(|j| {
                let q = j as f64 / (interior + 1) as f64;
                match spec.knots {
                    KnotRule::Uniform => lo + q * (hi - lo),
                    KnotRule::Quantile => empirical_quantile(sorted.as_ref().unwrap(), q),
                }
            })
            .collect();
        let strictly_inside = inner.iter().all(|&k| k > lo && k < hi);
        if !strictly_inside || inner.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateKnots { dim });
        }
        let mut knots = vec![lo; p + 1];
        knots.extend(inner);
        knots.extend(std::iter::repeat_n(hi, p + 1));
        Ok(Self {
            degree: p,
            knots,
            lo,
            hi,
        })
    }

    pub fn dof(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// All basis values at `x`, which must lie in `[lo, hi]`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let p = self.degree;
        let n = self.dof();
        let t = &self.knots;
        // Knot span: t[span] <= x < t[span + 1], with the right end folded
        // into the last non-empty span.
        let span = if x >= self.hi {
            n - 1
        } else {
            let mut lo = p;
            let mut hi = n;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if x < t[mid] {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lo
        };
        let mut local = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        local[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { local[r] / denom };
                local[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            local[j] = saved;
        }
        let mut out = vec![0.0; n];
        for (r, v) in local.into_iter().enumerate() {
            out[span - p + r] = v;
        }
        out
    }

    /// Dimension of the span of pairwise products of this basis.
    fn squared_dim(&self) -> usize {
        let p = self.degree;
        (2 * p + 1) + self.interior_knots().len() * (p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBspline {
    pub dims: Vec<UnivariateBspline>,
    pub clamp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketBasis {
    pub cuts: Vec<Vec<f64>>,
}

impl BracketBasis {
    fn cells_per_dim(&self) -> Vec<usize> {
        self.cuts.iter().map(|c| c.len() + 1).collect()
    }

    /// Linear cell index of `w` (first dimension varies slowest).
    pub fn cell_of(&self, w: &[f64]) -> usize {
        let mut idx = 0;
        for (c, &v) in self.cuts.iter().zip(w) {
            let j = c.iter().filter(|&&cut| v > cut).count();
            idx = idx * (c.len() + 1) + j;
        }
        idx
    }

    /// Per-dimension `(lower, upper]` bounds of a cell; infinite at the ends.
    pub fn cell_bounds(&self, cell: usize) -> Vec<(f64, f64)> {
        let sizes = self.cells_per_dim();
        let mut rem = cell;
        let mut pos = vec![0; sizes.len()];
        for d in (0..sizes.len()).rev() {
            pos[d] = rem % sizes[d];
            rem /= sizes[d];
        }
        pos.iter()
            .zip(&self.cuts)
            .map(|(&j, c)| {
                let lo = if j == 0 { f64::NEG_INFINITY } else { c[j - 1] };
                let hi = if j == c.len() { f64::INFINITY } else { c[j] };
                (lo, hi)
            })
            .collect()
    }
}

/// A resolved basis `p(w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    Bspline(TensorBspline),
    Bracket(BracketBasis),
}

/// Basis values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub values: Vec<f64>,
    pub clamped: bool,
}

/// `n × d_p` evaluations, row `i` holding `p(W_i)'`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub rows: Vec<Vec<f64>>,
    pub d_p: usize,
    /// Largest Euclidean row norm observed.
    pub zeta_p: f64,
    /// Rows whose `w` was clamped into the domain.
    pub clamped: usize,
}

impl BasisMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::Bspline(t) => t.dims.iter().map(UnivariateBspline::dof).product(),
            Basis::Bracket(b) => b.cells_per_dim().iter().product(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Basis::Bspline(t) => t.dims.len(),
            Basis::Bracket(b) => b.cuts.len(),
        }
    }

    pub fn as_bracket(&self) -> Option<&BracketBasis> {
        match self {
            Basis::Bracket(b) => Some(b),
            Basis::Bspline(_) => None,
        }
    }

    /// Upper bound on the dimension of the span of `{p_j p_k}`, reported
    /// as a diagnostic only.
    pub fn squared_space_dim(&self) -> usize {
        match self {
            Basis::Bspline(t) => t.dims.iter().map(UnivariateBspline::squared_dim).product(),
            Basis::Bracket(_) => self.dim(),
        }
    }

    pub fn evaluate(&self, w: &[f64]) -> Result<BasisRow> {
        if w.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: w.len(),
            });
        }
        match self {
            Basis::Bracket(b) => {
                let mut values = vec![0.0; self.dim()];
                values[b.cell_of(w)] = 1.0;
                Ok(BasisRow {
                    values,
                    clamped: false,
                })
            }
            Basis::Bspline(t) => {
                let mut clamped = false;
                let mut out = vec![1.0];
                for (d, (uni, &v)) in t.dims.iter().zip(w).enumerate() {
                    let x = if v < uni.lo || v > uni.hi || v.is_nan() {
                        if !t.clamp || v.is_nan() {
                            return Err(Error::DomainViolation {
                                dim: d,
                                value: v,
                                lo: uni.lo,
                                hi: uni.hi,
                            });
                        }
                        clamped = true;
                        v.clamp(uni.lo, uni.hi)
                    } else {
                        v
                    };
                    let vals = uni.eval(x);
                    let mut next = Vec::with_capacity(out.len() * vals.len());
                    for &a in &out {
                        for &b in &vals {
                            next.push(a * b);
                        }
                    }
                    out = next;
                }
                Ok(BasisRow {
                    values: out,
                    clamped,
                })
            }
        }
    }

    pub fn matrix(&self, w_values: &[Vec<f64>]) -> Result<BasisMatrix> {
        let rows = w_values
            .par_iter()
            .map(|w| self.evaluate(w))
            .collect::<Result<Vec<_>>>()?;
        let clamped = rows.iter().filter(|r| r.clamped).count();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.values).collect();
        let zeta_p = rows
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(BasisMatrix {
            rows,
            d_p: self.dim(),
            zeta_p,
            clamped,
        })
    }
}

/// Resolve `spec` on `w_values` and evaluate it at every row.
pub fn build_basis(spec: &BasisSpec, w_values: &[Vec<f64>]) -> Result<(Basis, BasisMatrix)> {
    let basis = spec.resolve(w_values)?;
    let matrix = basis.matrix(w_values)?;
    Ok((basis, matrix))
}

/// Untrimmed sieve rule `β'p(w)`.
pub fn evaluate_policy(beta: &[f64], basis: &Basis, w: &[f64]) -> Result<f64> {
    if beta.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: beta.len(),
        });
    }
    let row = basis.evaluate(w)?;
    Ok(beta.iter().zip(&row.values).map(|(b, p)| b * p).sum())
}
