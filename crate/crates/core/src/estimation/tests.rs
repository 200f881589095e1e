use super::*;
use crate::basis::SplineDimSpec;
use crate::data::Sample;
use crate::population::capacity::CapacityProblem;
use crate::population::{Cell, DiscreteDgp};
use crate::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

fn data_1d(w: &[f64]) -> Dataset {
    let samples = w.iter().map(|&v| Sample::new(0.0, false, vec![v])).collect();
    Dataset::new(samples, vec!["w".into()], vec![0]).unwrap()
}

fn weights(tau: Vec<f64>, xi: Vec<f64>) -> DebiasedWeights {
    DebiasedWeights::from_parts(tau, xi).unwrap()
}

fn constant() -> BasisSpec {
    BasisSpec::bracket(vec![vec![]])
}

fn linear_spline() -> BasisSpec {
    BasisSpec::bspline(vec![SplineDimSpec::uniform(1, 2, 0.0, 1.0)])
}

#[test]
fn intercept_with_unit_weights_is_treated_share() {
    let data = data_1d(&[0.1, 0.2, 0.3, 0.4, 0.5]);
    let w = weights(vec![1.0, -1.0, 0.0, 2.0, -0.5], vec![1.0; 5]);
    let est = estimate_debiased(&data, &constant(), &w).unwrap();
    assert!((est.beta_hat[0] - 0.6).abs() < 1e-15);
    assert_eq!(est.method, Method::Debiased);
    assert!(!est.used_pseudo_inverse);
}

#[test]
fn squared_weights_match_plugin() {
    let data = data_1d(&[0.0, 0.3, 0.5, 0.9, 1.0, 0.7]);
    let tau = vec![0.5, -1.0, 0.2, 1.5, -0.3, 0.8];
    let w = DebiasedWeights::plugin(tau.clone());
    let a = estimate_debiased(&data, &linear_spline(), &w).unwrap();
    let b = estimate_plugin(&data, &linear_spline(), &tau).unwrap();
    assert_eq!(a.beta_hat, b.beta_hat);
    assert_eq!(a.a_hat, b.a_hat);
    assert_eq!(b.method, Method::Plugin);
}

#[test]
fn four_row_bracket_by_hand() {
    let data = data_1d(&[0.0, 0.0, 1.0, 1.0]);
    let w = weights(vec![1.0, -1.0, 1.0, 1.0], vec![1.0, 2.0, 1.0, 2.0]);
    let est = estimate_debiased(&data, &BasisSpec::bracket(vec![vec![0.5]]), &w).unwrap();
    assert!((est.a_hat[0][0] - 0.75).abs() < 1e-15 && est.a_hat[0][1] == 0.0);
    assert!((est.b_hat[0] - 0.25).abs() < 1e-15 && (est.b_hat[1] - 0.75).abs() < 1e-15);
    assert!((est.beta_hat[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((est.beta_hat[1] - 1.0).abs() < 1e-15);
}

#[test]
fn four_row_linear_spline_by_hand() {
    // p(w) = (1 − w, w); solve the 2×2 normal equations by Cramer's rule.
    let ws = [0.0, 0.5, 1.0, 0.25];
    let xi = [1.0, 2.0, 1.0, 2.0];
    let tau = [1.0, -1.0, 1.0, 1.0];
    let est = estimate_debiased(&data_1d(&ws), &linear_spline(), &weights(tau.to_vec(), xi.to_vec())).unwrap();
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..4 {
        let (p1, p2) = (1.0 - ws[i], ws[i]);
        let ind = if tau[i] >= 0.0 { 1.0 } else { 0.0 };
        a11 += xi[i] * p1 * p1 / 4.0;
        a12 += xi[i] * p1 * p2 / 4.0;
        a22 += xi[i] * p2 * p2 / 4.0;
        b1 += xi[i] * p1 * ind / 4.0;
        b2 += xi[i] * p2 * ind / 4.0;
    }
    let det = a11 * a22 - a12 * a12;
    let beta = [(b1 * a22 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det];
    assert!((est.beta_hat[0] - beta[0]).abs() < 1e-13);
    assert!((est.beta_hat[1] - beta[1]).abs() < 1e-13);
    assert!(est.foc_residual() < 1e-14);
}

#[test]
fn plugin_signs_and_sign_constant_case() {
    let data = data_1d(&[0.1, 0.2, 0.3, 0.4]);
    let est = estimate_plugin(&data, &constant(), &[1.0, -1.0, 1.0, 1.0]).unwrap();
    assert!((est.beta_hat[0] - 0.75).abs() < 1e-15);
    let pos = estimate_plugin(&data_1d(&[0.0, 0.2, 0.6, 1.0]), &linear_spline(), &[0.3, 1.0, 2.0, 0.1]).unwrap();
    let t = trim(&pos);
    for w in [0.0, 0.2, 0.6, 1.0, 0.45] {
        assert!((t.evaluate(&[w]).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn trimming_clamps() {
    assert_eq!(clamp_unit(1.3), 1.0);
    assert_eq!(clamp_unit(-0.2), 0.0);
    assert_eq!(clamp_unit(0.63), 0.63);
    let mut est = estimate_debiased(
        &data_1d(&[0.0, 1.0]),
        &BasisSpec::bracket(vec![vec![0.5]]),
        &weights(vec![1.0, 1.0], vec![1.0, 1.0]),
    )
    .unwrap();
    est.beta_hat = vec![1.3, -0.2];
    let t = est.trimmed();
    assert_eq!(t.evaluate(&[0.0]).unwrap(), 1.0);
    assert_eq!(t.evaluate(&[1.0]).unwrap(), 0.0);
    est.beta_hat = vec![0.63, 0.5];
    assert_eq!(est.trimmed().evaluate(&[0.2]).unwrap(), 0.63);
}

#[test]
fn least_squares_oracle_for_unit_squared_effects() {
    // τ = ±1, so plug-in weights are all one and β̂ is the OLS fit of
    // 1{τ ≥ 0} on the basis.
    let mut rng = rng_from_seed(3);
    let n = 400;
    let ws: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let tau: Vec<f64> = ws.iter().map(|&w| if rng.random::<f64>() < 0.3 + 0.5 * w { 1.0 } else { -1.0 }).collect();
    let spec = BasisSpec::bspline(vec![SplineDimSpec::uniform(3, 6, 0.0, 1.0)]);
    let data = data_1d(&ws);
    let est = estimate_plugin(&data, &spec, &tau).unwrap();
    let (_, m) = build_basis(&spec, &data.w_rows()).unwrap();
    let x = DMatrix::from_fn(n, 6, |i, j| m.rows[i][j]);
    let y = DVector::from_iterator(n, tau.iter().map(|&t| if t >= 0.0 { 1.0 } else { 0.0 }));
    let ols = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    for j in 0..6 {
        assert!((est.beta_hat[j] - ols[j]).abs() < 1e-9);
    }
}

#[test]
fn restricted_rule_cases() {
    let w = weights(vec![1.0, 2.0, 0.5], vec![1.0, 4.0, 0.25]);
    assert_eq!(estimate_restricted(&w, &[0, 0, 0], 1).unwrap(), vec![1]);
    let sym = weights(vec![1.0, -1.0], vec![1.0, 1.0]);
    assert_eq!(estimate_restricted(&sym, &[0, 0], 1).unwrap(), vec![1]);
    let neg = weights(vec![0.1, -2.0], vec![0.01, 4.0]);
    assert_eq!(estimate_restricted(&neg, &[0, 0], 1).unwrap(), vec![0]);
    assert!(matches!(estimate_restricted(&w, &[0, 0, 0], 2), Err(Error::EmptyGroup(1))));
}

#[test]
fn restricted_rule_agrees_with_population_at_scale() {
    let dgp = DiscreteDgp::mentoring();
    let mut rng = rng_from_seed(4);
    let n = 50_000;
    let share_high = dgp.cells()[1].mass;
    let tau: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < share_high { dgp.cells()[1].tau } else { dgp.cells()[0].tau })
        .collect();
    let w = DebiasedWeights::plugin(tau);
    let rule = estimate_restricted(&w, &vec![0; n], 1).unwrap();
    assert_eq!(rule[0], crate::population::restricted_rule(&dgp, "all").unwrap());
    assert_eq!(rule[0], 1);
}

/// A dataset whose empirical cell moments equal those of a discrete law
/// with masses on a 1/100 grid.
fn replicate(dgp: &DiscreteDgp) -> (Dataset, DebiasedWeights) {
    let mut ws = Vec::new();
    let mut tau = Vec::new();
    for (i, c) in dgp.cells().iter().enumerate() {
        let g = dgp.group_index_of_cell(i) as f64;
        for _ in 0..(c.mass * 100.0).round() as usize {
            ws.push(g);
            tau.push(c.tau);
        }
    }
    (data_1d(&ws), DebiasedWeights::plugin(tau))
}

fn group_cuts(groups: usize) -> BasisSpec {
    BasisSpec::bracket(vec![(0..groups - 1).map(|g| g as f64 + 0.5).collect()])
}

#[test]
fn capacity_single_group() {
    let mut tau = vec![1.0; 88];
    tau.extend(vec![-1.0; 12]);
    let w = DebiasedWeights::plugin(tau);
    let data = data_1d(&[0.0; 100]);
    let est = estimate_capacity_constrained(&data, &constant(), &w, 0.5).unwrap();
    assert!((est.delta[0] - 0.5).abs() < 1e-12);
    assert!(est.binding);
    let loose = estimate_capacity_constrained(&data, &constant(), &w, 0.95).unwrap();
    assert!((loose.delta[0] - 0.88).abs() < 1e-12);
    assert!(!loose.binding);
}

#[test]
fn non_binding_capacity_matches_unconstrained_bracket() {
    let data = data_1d(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let w = weights(vec![1.0, -0.5, 2.0, -1.0, -2.0, 0.3], vec![1.0, 0.25, 4.0, 1.0, 4.0, 0.09]);
    let spec = BasisSpec::bracket(vec![vec![0.5]]);
    let cap = estimate_capacity_constrained(&data, &spec, &w, 0.99).unwrap();
    let free = estimate_debiased(&data, &spec, &w).unwrap();
    for j in 0..2 {
        assert!((cap.delta[j] - free.beta_hat[j]).abs() < 1e-14);
    }
    assert!(!cap.binding);
}

#[test]
fn capacity_with_population_weights_matches_kkt_solution() {
    let dgp = DiscreteDgp::new(vec![
        Cell { w: "a".into(), x: "a1".into(), mass: 0.2, tau: 1.0 },
        Cell { w: "a".into(), x: "a2".into(), mass: 0.1, tau: -0.5 },
        Cell { w: "b".into(), x: "b1".into(), mass: 0.3, tau: 0.4 },
        Cell { w: "b".into(), x: "b2".into(), mass: 0.1, tau: -1.2 },
        Cell { w: "c".into(), x: "c1".into(), mass: 0.3, tau: 0.9 },
    ])
    .unwrap();
    let (data, w) = replicate(&dgp);
    for t in [0.2, 0.35, 0.6, 0.9] {
        let est = estimate_capacity_constrained(&data, &group_cuts(3), &w, t).unwrap();
        let pop = CapacityProblem::from_dgp(&dgp, t).unwrap().solve().unwrap();
        for j in 0..3 {
            assert!((est.delta[j] - pop.delta[j]).abs() < 1e-6, "t={t} cell {j}");
        }
        assert_eq!(est.binding, pop.binding);
    }
}

#[test]
fn capacity_falls_back_to_plugin_when_not_convex() {
    let data = data_1d(&[0.0, 0.0, 1.0, 1.0]);
    let w = weights(vec![1.0, 0.5, 1.0, -1.0], vec![-3.0, 1.0, 1.0, 1.0]);
    let est = estimate_capacity_constrained(&data, &BasisSpec::bracket(vec![vec![0.5]]), &w, 0.5).unwrap();
    assert_eq!(est.weights_used, Method::Plugin);
    assert!(!est.warnings.is_empty());
    assert!(matches!(
        estimate_capacity_constrained(&data, &linear_spline(), &w, 0.5),
        Err(Error::UnsupportedBasis)
    ));
    assert!(matches!(
        estimate_capacity_constrained(&data, &constant(), &w, 1.0),
        Err(Error::InfeasibleCapacity(_))
    ));
}

#[test]
fn conditioning_flags() {
    let data = data_1d(&[0.0, 0.0, 1.0, 1.0]);
    let w = weights(vec![1.0, -1.0, 1.0, 1.0], vec![1.0; 4]);
    let est = estimate_debiased(&data, &BasisSpec::bracket(vec![vec![0.5]]), &w).unwrap();
    assert!(conditioning_report(&est, &w, MIN_EIG_WARN).warning.is_none());
    let gap = estimate_debiased(&data, &BasisSpec::bracket(vec![vec![0.5, 0.7]]), &w).unwrap();
    let rep = conditioning_report(&gap, &w, MIN_EIG_WARN);
    assert!(rep.used_pseudo_inverse && rep.warning.is_some());
    assert_eq!(gap.beta_hat[1], 0.0);
}

fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (8usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..1.0, n),
            proptest::collection::vec(-2.0f64..2.0, n),
            proptest::collection::vec(-0.5f64..3.0, n),
        )
    })
}

proptest! {
    #[test]
    fn bracket_solution_is_cell_ratio((ws, tau, xi) in arb_instance()) {
        let spec = BasisSpec::bracket(vec![vec![0.3, 0.6]]);
        let data = data_1d(&ws);
        let est = estimate_debiased(&data, &spec, &weights(tau.clone(), xi.clone())).unwrap();
        let basis = spec.resolve(&data.w_rows()).unwrap();
        let cell = bracket_groups(&data, &basis).unwrap();
        for c in 0..3 {
            let den: f64 = (0..ws.len()).filter(|&i| cell[i] == c).map(|i| xi[i]).sum();
            let num: f64 = (0..ws.len()).filter(|&i| cell[i] == c && tau[i] >= 0.0).map(|i| xi[i]).sum();
            if den.abs() > 1e-6 {
                prop_assert!((est.beta_hat[c] - num / den).abs() < 1e-8 * (1.0 + (num / den).abs()));
            }
        }
    }

    #[test]
    fn plugin_gram_is_psd_and_foc_holds((ws, tau, _xi) in arb_instance()) {
        let spec = BasisSpec::bspline(vec![SplineDimSpec::uniform(3, 5, 0.0, 1.0)]);
        let est = estimate_plugin(&data_1d(&ws), &spec, &tau).unwrap();
        prop_assert!(est.min_eig_a_hat >= -1e-10);
        if est.min_eig_a_hat > 1e-8 && !est.used_pseudo_inverse {
            prop_assert!(est.foc_residual() <= 1e-8);
        }
        let t = est.trimmed();
        for w in [0.0, 0.33, 0.5, 1.0] {
            let v = t.evaluate(&[w]).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn water_fill_matches_scan(
        raw in proptest::collection::vec((0.05f64..1.0, 0.01f64..2.0, 0.0f64..1.0), 1..10),
        t in 0.01f64..0.99,
    ) {
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let p: Vec<f64> = raw.iter().map(|r| r.0 / total).collect();
        let a: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let b: Vec<f64> = raw.iter().map(|r| r.1 * r.2).collect();
        let (delta, lambda) = water_fill(&p, &a, &b, t);
        prop_assert!(water_fill_kkt(&p, &a, &b, t, &delta, lambda) < 1e-10);
        let groups = p.iter().zip(&a).zip(&b)
            .map(|((&p, &a), &b)| crate::population::capacity::CapacityGroup { p, a, b })
            .collect();
        let scan = CapacityProblem::new(groups, t).unwrap().solve().unwrap();
        for j in 0..p.len() {
            prop_assert!((delta[j] - scan.delta[j]).abs() < 1e-9);
        }
    }
}
