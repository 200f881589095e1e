//! Exact solvers for the planner's problem on a finite-support law of
//! `(W, X, τ(X))`: regret profiles, the regret-averse loss, the Atkinson
//! index of regret, optimal fractional and restricted rules, first-order
//! residuals, and capacity-constrained optima (see [`capacity`]).
//!
//! Conventions: `1{τ ≥ 0}` and `sgn(0) = 1` both count a zero effect as
//! "treat".

pub mod capacity;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::json_pointer;

/// `1{τ ≥ 0}`.
#[inline]
pub fn treat_indicator(tau: f64) -> f64 {
    if tau >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `sgn` with `sgn(0) = 1`.
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `Reg(x, δ) = τ(x)[1{τ(x) ≥ 0} − δ]`.
#[inline]
pub fn cell_regret(tau: f64, delta: f64) -> f64 {
    tau * (treat_indicator(tau) - delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub w: String,
    pub x: String,
    pub mass: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgpFile {
    cells: Vec<Cell>,
}

/// Finite-support joint law of `(W, X, τ(X))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DgpFile", into = "DgpFile")]
pub struct DiscreteDgp {
    cells: Vec<Cell>,
    groups: Vec<String>,
    group_of: Vec<usize>,
}

impl TryFrom<DgpFile> for DiscreteDgp {
    type Error = Error;
    fn try_from(f: DgpFile) -> Result<Self> {
        DiscreteDgp::new(f.cells)
    }
}

impl From<DiscreteDgp> for DgpFile {
    fn from(d: DiscreteDgp) -> Self {
        DgpFile { cells: d.cells }
    }
}

const MASS_TOL: f64 = 1e-9;

impl DiscreteDgp {
    pub fn new(cells: Vec<Cell>) -> Result<Self> {
        let invalid = |path: String, message: String| Error::InvalidDgp { path, message };
        if cells.is_empty() {
            return Err(invalid("/cells".into(), "no cells".into()));
        }
        let mut groups: Vec<String> = Vec::new();
        let mut group_of = Vec::with_capacity(cells.len());
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, c) in cells.iter().enumerate() {
            if !(c.mass > 0.0 && c.mass.is_finite()) {
                return Err(invalid(format!("/cells/{i}/mass"), format!("mass must be positive, found {}", c.mass)));
            }
            if !c.tau.is_finite() {
                return Err(invalid(format!("/cells/{i}/tau"), "tau must be finite".into()));
            }
            match owner.get(c.x.as_str()) {
                Some(&w) if w == c.w => {
                    return Err(invalid(format!("/cells/{i}/x"), format!("duplicate cell ({}, {})", c.w, c.x)))
                }
                Some(&w) => {
                    return Err(invalid(
                        format!("/cells/{i}/x"),
                        format!("subgroup \"{}\" already belongs to group \"{w}\"", c.x),
                    ))
                }
                None => {
                    owner.insert(&c.x, &c.w);
                }
            }
            let g = match groups.iter().position(|g| g == &c.w) {
                Some(g) => g,
                None => {
                    groups.push(c.w.clone());
                    groups.len() - 1
                }
            };
            group_of.push(g);
        }
        let total: f64 = cells.iter().map(|c| c.mass).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid("/cells".into(), format!("masses sum to {total}, not 1")));
        }
        Ok(Self { cells, groups, group_of })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let file: DgpFile = serde_path_to_error::deserialize(de).map_err(|e| Error::InvalidDgp {
            path: json_pointer(e.path()),
            message: e.into_inner().to_string(),
        })?;
        Self::new(file.cells)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DgpFile { cells: self.cells.clone() }).expect("serializable")
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Group labels in order of first appearance.
    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group_index_of_cell(&self, cell: usize) -> usize {
        self.group_of[cell]
    }

    pub fn group_index(&self, w: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g == w)
            .ok_or_else(|| Error::UnknownGroup(w.to_string()))
    }

    pub fn group_mass(&self, g: usize) -> f64 {
        self.cells_in(g).map(|c| c.mass).sum()
    }

    fn cells_in(&self, g: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.cells
            .iter()
            .zip(&self.group_of)
            .filter(move |(_, &gi)| gi == g)
            .map(|(c, _)| c)
    }

    /// `E[f(τ) | W = w_g]`.
    pub fn conditional_mean(&self, g: usize, f: impl Fn(f64) -> f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in self.cells_in(g) {
            num += c.mass * f(c.tau);
            den += c.mass;
        }
        num / den
    }

    /// `E[τ² | W = w_g]`.
    pub fn second_moment(&self, g: usize) -> f64 {
        self.conditional_mean(g, |t| t * t)
    }

    /// `E[τ² 1{τ ≥ 0} | W = w_g]`.
    pub fn positive_second_moment(&self, g: usize) -> f64 {
        self.conditional_mean(g, |t| t * t * treat_indicator(t))
    }

    /// The two-group mentoring law: a single policy group and two
    /// subgroups with effects `tau_low > 0 > tau_high`.
    pub fn two_group(tau_low: f64, tau_high: f64, share_high: f64) -> Result<Self> {
        Self::new(vec![
            Cell {
                w: "all".into(),
                x: "low".into(),
                mass: 1.0 - share_high,
                tau: tau_low,
            },
            Cell {
                w: "all".into(),
                x: "high".into(),
                mass: share_high,
                tau: tau_high,
            },
        ])
    }

    /// Mentoring law used throughout the tests and example configs.
    pub fn mentoring() -> Self {
        Self::two_group(MENTORING_TAU_LOW, MENTORING_TAU_HIGH, MENTORING_SHARE_HIGH)
            .expect("valid constants")
    }
}

/// Subgroup effects and the higher-SES share backed out of the
/// regret table: treat-all gives regrets (0, 0.22) and mean regret 0.12,
/// the 88% rule gives low-SES regret 0.08, and the α = 3 optimum sits at
/// 0.82.
pub const MENTORING_TAU_LOW: f64 = 0.64;
pub const MENTORING_TAU_HIGH: f64 = -0.22;
pub const MENTORING_SHARE_HIGH: f64 = 0.542;

/// Treatment fraction per policy group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularRule {
    pub values: BTreeMap<String, f64>,
}

impl TabularRule {
    pub fn uniform(dgp: &DiscreteDgp, delta: f64) -> Self {
        Self {
            values: dgp.groups().iter().map(|g| (g.clone(), delta)).collect(),
        }
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, f64)>>(pairs: I) -> Self {
        Self {
            values: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, w: &str) -> Result<f64> {
        self.values
            .get(w)
            .copied()
            .ok_or_else(|| Error::MissingGroup(w.to_string()))
    }

    fn per_group(&self, dgp: &DiscreteDgp) -> Result<Vec<f64>> {
        dgp.groups().iter().map(|g| self.get(g)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRegret {
    pub w: String,
    pub x: String,
    pub mass: f64,
    pub tau: f64,
    pub delta: f64,
    pub regret: f64,
}

/// Distribution of regret over subgroups under one rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretProfile {
    pub cells: Vec<CellRegret>,
    pub mean_regret: f64,
}

impl RegretProfile {
    /// `E[Reg^α]`.
    pub fn moment(&self, alpha: f64) -> f64 {
        self.cells.iter().map(|c| c.mass * c.regret.powf(alpha)).sum()
    }

    /// Equally distributed equivalent regret `{E[Reg^α]}^{1/α}`.
    pub fn equally_distributed_equivalent(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha, false)?;
        Ok(self.moment(alpha).powf(1.0 / alpha))
    }

    pub fn atkinson_index(&self, alpha: f64) -> Result<f64> {
        atkinson_index(self, alpha)
    }
}

fn check_alpha(alpha: f64, strict: bool) -> Result<()> {
    let ok = if strict { alpha > 1.0 } else { alpha >= 1.0 };
    if ok && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Per-subgroup regret of a tabular rule.
pub fn regret(dgp: &DiscreteDgp, rule: &TabularRule) -> Result<RegretProfile> {
    let deltas = rule.per_group(dgp)?;
    for (g, &d) in dgp.groups().iter().zip(&deltas) {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::RuleOutOfRange {
                group: g.clone(),
                value: d,
            });
        }
    }
    let cells: Vec<CellRegret> = dgp
        .cells()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let delta = deltas[dgp.group_index_of_cell(i)];
            CellRegret {
                w: c.w.clone(),
                x: c.x.clone(),
                mass: c.mass,
                tau: c.tau,
                delta,
                regret: cell_regret(c.tau, delta),
            }
        })
        .collect();
    let mean_regret = cells.iter().map(|c| c.mass * c.regret).sum();
    Ok(RegretProfile { cells, mean_regret })
}

/// `L(δ, τ) = E[Reg^α]`.
pub fn loss_alpha(dgp: &DiscreteDgp, rule: &TabularRule, alpha: f64) -> Result<f64> {
    check_alpha(alpha, false)?;
    Ok(regret(dgp, rule)?.moment(alpha))
}

/// Squared-regret loss `E[τ²(1{τ≥0} − δ(W))²]` for any real-valued rule,
/// including untrimmed sieve fits outside `[0, 1]`.
pub fn loss_sq_with(dgp: &DiscreteDgp, delta_of_group: impl Fn(usize) -> f64) -> f64 {
    dgp.cells()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = cell_regret(c.tau, delta_of_group(dgp.group_index_of_cell(i)));
            c.mass * r * r
        })
        .sum()
}

/// `{E[Reg^α]}^{1/α} / E[Reg] − 1`, and 0 when mean regret is zero.
pub fn atkinson_index(profile: &RegretProfile, alpha: f64) -> Result<f64> {
    check_alpha(alpha, false)?;
    if profile.mean_regret <= 0.0 {
        return Ok(0.0);
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    Ok(profile.equally_distributed_equivalent(alpha)? / profile.mean_regret - 1.0)
}

/// An optimal treatment fraction; `non_unique` marks groups where every
/// action in `[0, 1]` is optimal (reported as 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fraction {
    pub value: f64,
    pub non_unique: bool,
}

impl Fraction {
    fn unique(value: f64) -> Self {
        Self { value, non_unique: false }
    }

    fn any() -> Self {
        Self { value: 0.5, non_unique: true }
    }
}

/// Closed-form α = 2 optimum `E[τ² 1{τ≥0} | w] / E[τ² | w]`.
pub fn optimal_fraction_sq(dgp: &DiscreteDgp, w: &str) -> Result<Fraction> {
    let g = dgp.group_index(w)?;
    let a = dgp.second_moment(g);
    if a <= 0.0 {
        return Ok(Fraction::any());
    }
    Ok(Fraction::unique(dgp.positive_second_moment(g) / a))
}

/// `α E[τ · Reg^{α−1} | W = w]` at fraction `delta`. This is minus the
/// derivative of the conditional loss: positive values call for more
/// treatment, negative values for less.
pub fn foc_at(dgp: &DiscreteDgp, g: usize, delta: f64, alpha: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in dgp.cells_in(g) {
        let r = cell_regret(c.tau, delta);
        let term = if alpha == 1.0 { 1.0 } else { r.max(0.0).powf(alpha - 1.0) };
        num += c.mass * c.tau * term;
        den += c.mass;
    }
    alpha * num / den
}

/// Conditional first-order residual of `rule` in group `w`.
pub fn foc_residual(dgp: &DiscreteDgp, rule: &TabularRule, alpha: f64, w: &str) -> Result<f64> {
    check_alpha(alpha, true)?;
    let g = dgp.group_index(w)?;
    Ok(foc_at(dgp, g, rule.get(w)?, alpha))
}

/// Minimiser of `E[Reg^α | W = w]` over `[0, 1]` for `α > 1`, found by
/// bisection on the decreasing first-order condition.
pub fn optimal_fraction_alpha(dgp: &DiscreteDgp, w: &str, alpha: f64) -> Result<Fraction> {
    check_alpha(alpha, true)?;
    let g = dgp.group_index(w)?;
    Ok(solve_foc(dgp, g, alpha, 0.0))
}

/// Solve `foc(δ) = level` on `[0, 1]` to float resolution, clamping at the ends.
pub(crate) fn solve_foc(dgp: &DiscreteDgp, g: usize, alpha: f64, level: f64) -> Fraction {
    if dgp.cells_in(g).all(|c| c.tau == 0.0) {
        return Fraction::any();
    }
    let f = |d: f64| foc_at(dgp, g, d, alpha) - level;
    if f(0.0) <= 0.0 {
        return Fraction::unique(0.0);
    }
    if f(1.0) >= 0.0 {
        return Fraction::unique(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Fraction::unique(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Optimal fraction for any `α ≥ 1`: the sign of `τ(w)` at α = 1, the closed
/// form at α = 2, bisection otherwise.
pub fn optimal_fraction(dgp: &DiscreteDgp, w: &str, alpha: f64) -> Result<Fraction> {
    check_alpha(alpha, false)?;
    if alpha == 1.0 {
        let g = dgp.group_index(w)?;
        let cate = dgp.conditional_mean(g, |t| t);
        return Ok(if cate == 0.0 {
            Fraction::any()
        } else {
            Fraction::unique(treat_indicator(cate))
        });
    }
    if alpha == 2.0 {
        return optimal_fraction_sq(dgp, w);
    }
    optimal_fraction_alpha(dgp, w, alpha)
}

/// Optimal rule over every group.
pub fn optimal_rule(dgp: &DiscreteDgp, alpha: f64) -> Result<TabularRule> {
    let pairs = dgp
        .groups()
        .iter()
        .map(|g| Ok((g.clone(), optimal_fraction(dgp, g, alpha)?.value)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TabularRule::from_pairs(pairs))
}

/// Best `{0, 1}` action under squared regret: `1{E[τ² sgn(τ) | w] ≥ 0}`.
pub fn restricted_rule(dgp: &DiscreteDgp, w: &str) -> Result<u8> {
    let g = dgp.group_index(w)?;
    let s = dgp.conditional_mean(g, |t| t * t * sgn(t));
    Ok(u8::from(s >= 0.0))
}
