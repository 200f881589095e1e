//! Synthetic designs with known optimal rules, exact excess risk, and a
//! Monte Carlo harness for convergence rates.
//!
//! Every design draws `D ~ Bernoulli(π)` independently of the potential
//! outcomes and sets `Y = γ_D(X) + σ e` with `e ~ N(0, 1)`.

mod experiment;
pub mod quadrature;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec, SplineDimSpec};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::population::{loss_sq_with, optimal_fraction_sq, DiscreteDgp, MENTORING_SHARE_HIGH, MENTORING_TAU_HIGH, MENTORING_TAU_LOW};
use crate::rng::{rng_from_seed, Rng};

pub use experiment::{run_rate_experiment, EstimatorConfig, MonteCarloReport, NSummary, ReplicationRow};

fn default_noise() -> f64 {
    1.0
}

fn default_pi() -> f64 {
    0.5
}

/// Distribution of `|τ|` in the sieve design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnitude {
    /// `|τ| = c`, bounded away from zero.
    #[default]
    Constant,
    /// `|τ| = c·U` with `U ~ U[0, 1]`, putting mass near zero.
    Uniform,
}

/// `m(w)` for the boundary design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum MFunction {
    Constant { value: f64 },
    /// `level + amplitude · sin(2π · frequency · w)`.
    Sine { level: f64, amplitude: f64, frequency: f64 },
}

impl MFunction {
    pub fn eval(&self, w: f64) -> f64 {
        match self {
            MFunction::Constant { value } => *value,
            MFunction::Sine {
                level,
                amplitude,
                frequency,
            } => level + amplitude * (2.0 * std::f64::consts::PI * frequency * w).sin(),
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            MFunction::Constant { value } => (*value, *value),
            MFunction::Sine { level, amplitude, .. } => (level - amplitude.abs(), level + amplitude.abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticDgp {
    /// `X = (w, high)` with constant `w = 0` and `high ~ Bernoulli(share_high)`;
    /// `τ = tau_high` if high, else `tau_low`; `γ₀ = 1 + 0.5·high`.
    TwoGroup {
        tau_low: f64,
        tau_high: f64,
        share_high: f64,
        #[serde(default = "default_pi")]
        pi: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// `X = (W, V[, U])` with `W ~ U[0, 1]`, `V ∈ {−1, 1}` and
    /// `P(V = 1 | W) = β*'p(W)`; `τ = c·V` (times `U` for uniform
    /// magnitude); `γ₀ = 1 + W + 0.5 V`. The optimal rule is `β*'p`.
    ParametricSieve {
        basis: BasisSpec,
        beta_star: Vec<f64>,
        #[serde(default = "default_effect")]
        effect: f64,
        #[serde(default)]
        magnitude: Magnitude,
        #[serde(default = "default_pi")]
        pi: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// `X = (W, X₁)` with `W ~ U[0, 1]`, `X₁ = sgn(m(W) + ε)`,
    /// `ε ~ U[−1, 0]`; `τ = X₁`; `γ₀ = W`. The optimal rule is `m`.
    LowerBound {
        m: MFunction,
        #[serde(default = "default_pi")]
        pi: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

fn default_effect() -> f64 {
    1.0
}

impl SyntheticDgp {
    pub fn mentoring(pi: f64, noise: f64) -> Self {
        SyntheticDgp::TwoGroup {
            tau_low: MENTORING_TAU_LOW,
            tau_high: MENTORING_TAU_HIGH,
            share_high: MENTORING_SHARE_HIGH,
            pi,
            noise,
        }
    }

    /// Cubic Bernstein design with `δ*(w) = 0.2 + 0.6 w`.
    pub fn linear_sieve(pi: f64, noise: f64) -> Self {
        SyntheticDgp::ParametricSieve {
            basis: BasisSpec::bspline(vec![SplineDimSpec::uniform(3, 4, 0.0, 1.0)]),
            beta_star: vec![0.2, 0.4, 0.6, 0.8],
            effect: 1.0,
            magnitude: Magnitude::Constant,
            pi,
            noise,
        }
    }

    pub fn sine_boundary(pi: f64, noise: f64) -> Self {
        SyntheticDgp::LowerBound {
            m: MFunction::Sine {
                level: 0.5,
                amplitude: 0.3,
                frequency: 1.0,
            },
            pi,
            noise,
        }
    }

    pub fn pi(&self) -> f64 {
        match self {
            SyntheticDgp::TwoGroup { pi, .. } | SyntheticDgp::ParametricSieve { pi, .. } | SyntheticDgp::LowerBound { pi, .. } => *pi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSimulation(m));
        let pi = self.pi();
        if !(pi > 0.0 && pi < 1.0) {
            return bad(format!("propensity must lie in (0, 1), found {pi}"));
        }
        let noise = match self {
            SyntheticDgp::TwoGroup { noise, .. } | SyntheticDgp::ParametricSieve { noise, .. } | SyntheticDgp::LowerBound { noise, .. } => *noise,
        };
        if !(noise >= 0.0 && noise.is_finite()) {
            return bad(format!("noise scale must be finite and >= 0, found {noise}"));
        }
        match self {
            SyntheticDgp::TwoGroup { share_high, tau_low, tau_high, .. } => {
                if !(*share_high > 0.0 && *share_high < 1.0) {
                    return bad(format!("share_high must lie in (0, 1), found {share_high}"));
                }
                if !(tau_low.is_finite() && tau_high.is_finite()) {
                    return bad("effects must be finite".into());
                }
            }
            SyntheticDgp::ParametricSieve { basis, beta_star, effect, .. } => {
                let b = self.sieve_basis()?;
                if basis.input_dim() != 1 {
                    return bad("the sieve design uses a one-dimensional W".into());
                }
                if beta_star.len() != b.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: b.dim(),
                        found: beta_star.len(),
                    });
                }
                if beta_star.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("beta_star entries must lie in [0, 1]".into());
                }
                if !(*effect > 0.0 && effect.is_finite()) {
                    return bad(format!("effect must be positive, found {effect}"));
                }
            }
            SyntheticDgp::LowerBound { m, .. } => {
                let (lo, hi) = m.range();
                if !(lo >= 0.0 && hi <= 1.0) {
                    return bad(format!("m must map into [0, 1], found range [{lo}, {hi}]"));
                }
            }
        }
        Ok(())
    }

    fn sieve_basis(&self) -> Result<Basis> {
        match self {
            SyntheticDgp::ParametricSieve { basis, .. } => basis.resolve(&[]).map_err(|e| {
                Error::InvalidSimulation(format!("sieve design basis must have fixed bounds and knots: {e}"))
            }),
            _ => Err(Error::NoClosedFormOracle),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            SyntheticDgp::TwoGroup { .. } => &["w", "high"],
            SyntheticDgp::ParametricSieve {
                magnitude: Magnitude::Uniform,
                ..
            } => &["w", "v", "u"],
            SyntheticDgp::ParametricSieve { .. } => &["w", "v"],
            SyntheticDgp::LowerBound { .. } => &["w", "x1"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// The discrete law of the two-group design.
    pub fn discrete(&self) -> Option<DiscreteDgp> {
        match self {
            SyntheticDgp::TwoGroup {
                tau_low,
                tau_high,
                share_high,
                ..
            } => DiscreteDgp::two_group(*tau_low, *tau_high, *share_high).ok(),
            _ => None,
        }
    }

    /// `E[τ² | W = w]`.
    pub fn second_moment(&self, _w: &[f64]) -> f64 {
        match self {
            SyntheticDgp::TwoGroup {
                tau_low,
                tau_high,
                share_high,
                ..
            } => share_high * tau_high * tau_high + (1.0 - share_high) * tau_low * tau_low,
            SyntheticDgp::ParametricSieve { effect, magnitude, .. } => match magnitude {
                Magnitude::Constant => effect * effect,
                Magnitude::Uniform => effect * effect / 3.0,
            },
            SyntheticDgp::LowerBound { .. } => 1.0,
        }
    }

    /// One draw of `(X, τ(X), γ₀(X))`.
    fn draw_x(&self, rng: &mut Rng, sieve: Option<&Basis>) -> (Vec<f64>, f64, f64) {
        match self {
            SyntheticDgp::TwoGroup {
                tau_low,
                tau_high,
                share_high,
                ..
            } => {
                let high = rng.random::<f64>() < *share_high;
                let h = if high { 1.0 } else { 0.0 };
                (vec![0.0, h], if high { *tau_high } else { *tau_low }, 1.0 + 0.5 * h)
            }
            SyntheticDgp::ParametricSieve {
                beta_star,
                effect,
                magnitude,
                ..
            } => {
                let basis = sieve.expect("sieve basis resolved");
                let w: f64 = rng.random();
                let q = dot(beta_star, &basis.evaluate(&[w]).expect("w inside [0, 1]").values);
                let v = if rng.random::<f64>() < q { 1.0 } else { -1.0 };
                let mut x = vec![w, v];
                let mut tau = effect * v;
                if *magnitude == Magnitude::Uniform {
                    let u: f64 = rng.random();
                    tau *= u;
                    x.push(u);
                }
                (x, tau, 1.0 + w + 0.5 * v)
            }
            SyntheticDgp::LowerBound { m, .. } => {
                let w: f64 = rng.random();
                let eps: f64 = -rng.random::<f64>();
                let x1 = if m.eval(w) + eps >= 0.0 { 1.0 } else { -1.0 };
                (vec![w, x1], x1, w)
            }
        }
    }

    /// `n` observations `(Y, D, X)` with `W` the first column of `X`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let sieve = match self {
            SyntheticDgp::ParametricSieve { .. } => Some(self.sieve_basis()?),
            _ => None,
        };
        let noise = match self {
            SyntheticDgp::TwoGroup { noise, .. } | SyntheticDgp::ParametricSieve { noise, .. } | SyntheticDgp::LowerBound { noise, .. } => *noise,
        };
        let pi = self.pi();
        let mut rng = rng_from_seed(seed);
        let samples = (0..n)
            .map(|_| {
                let (x, tau, g0) = self.draw_x(&mut rng, sieve.as_ref());
                let treated = rng.random::<f64>() < pi;
                let e: f64 = rng.sample(StandardNormal);
                let mean = if treated { g0 + tau } else { g0 };
                Sample::new(mean + noise * e, treated, x)
            })
            .collect();
        Dataset::new(samples, self.column_names(), vec![0])
    }

    /// `τ(X)` for rows drawn by [`Self::sample`].
    pub fn tau_of(&self, x: &[f64]) -> f64 {
        match self {
            SyntheticDgp::TwoGroup { tau_low, tau_high, .. } => {
                if x[1] > 0.5 {
                    *tau_high
                } else {
                    *tau_low
                }
            }
            SyntheticDgp::ParametricSieve { effect, magnitude, .. } => {
                let base = effect * x[1];
                if *magnitude == Magnitude::Uniform {
                    base * x[2]
                } else {
                    base
                }
            }
            SyntheticDgp::LowerBound { .. } => x[1],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sample_dataset(dgp: &SyntheticDgp, n: usize, seed: u64) -> Result<Dataset> {
    dgp.sample(n, seed)
}

/// The optimal squared-regret rule `δ*(w)`.
pub fn oracle_policy(dgp: &SyntheticDgp, w: &[f64]) -> Result<f64> {
    dgp.validate()?;
    match dgp {
        SyntheticDgp::TwoGroup { .. } => {
            let d = dgp.discrete().ok_or(Error::NoClosedFormOracle)?;
            Ok(optimal_fraction_sq(&d, "all")?.value)
        }
        SyntheticDgp::ParametricSieve { beta_star, .. } => {
            let basis = dgp.sieve_basis()?;
            Ok(dot(beta_star, &basis.evaluate(w)?.values))
        }
        SyntheticDgp::LowerBound { m, .. } => Ok(m.eval(w[0])),
    }
}

/// `β*` of the sieve design.
pub fn oracle_coefficients(dgp: &SyntheticDgp) -> Result<Vec<f64>> {
    match dgp {
        SyntheticDgp::ParametricSieve { beta_star, .. } => Ok(beta_star.clone()),
        _ => Err(Error::NoClosedFormOracle),
    }
}

/// `L(δ, τ) − L(δ*, τ)` under squared regret. Continuous designs use
/// `∫ E[τ² | w](δ(w) − δ*(w))² dw` by composite Gauss–Legendre quadrature;
/// the two-group design sums exactly over its cells.
pub fn excess_risk_fn(dgp: &SyntheticDgp, rule: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    dgp.validate()?;
    match dgp {
        SyntheticDgp::TwoGroup { .. } => {
            let d = dgp.discrete().ok_or(Error::NoClosedFormOracle)?;
            let delta = rule(&[0.0])?;
            let best = optimal_fraction_sq(&d, "all")?.value;
            Ok(loss_sq_with(&d, |_| delta) - loss_sq_with(&d, |_| best))
        }
        _ => {
            let mut err = None;
            let v = quadrature::integrate_unit(|w| {
                let p = [w];
                match (rule(&p), oracle_policy(dgp, &p)) {
                    (Ok(a), Ok(b)) => dgp.second_moment(&p) * (a - b).powi(2),
                    (Err(e), _) | (_, Err(e)) => {
                        err.get_or_insert(e);
                        0.0
                    }
                }
            });
            match err {
                Some(e) => Err(e),
                None => Ok(v),
            }
        }
    }
}

pub fn excess_risk(dgp: &SyntheticDgp, rule: &crate::estimation::TrimmedPolicy) -> Result<f64> {
    excess_risk_fn(dgp, |w| rule.evaluate(w))
}
