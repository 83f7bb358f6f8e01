use dpfair::problems::Leaf;
use dpfair::{
    pf_sensitivity, AllotmentProblem, BoolOp, Comparator, Dataset, DecisionRule, LinearProblem, Normalizer, OutputKind,
    Predicate, Problem,
};
use proptest::prelude::*;

fn shares(p: &AllotmentProblem<f64>, x: &[f64]) -> Vec<f64> {
    let ids = (0..x.len()).map(|i| i.to_string()).collect();
    // released datasets accept fractional values, which the stencil needs
    let d = Dataset::raw(ids, vec!["x".into()], vec![0.0; x.len()])
        .unwrap()
        .with_released_values(x.to_vec())
        .unwrap();
    p.evaluate(&d).unwrap().values
}

/// Central second differences summed over every coordinate.
fn fd_trace(p: &AllotmentProblem<f64>, x: &[f64], i: usize, h: f64) -> f64 {
    let f0 = shares(p, x)[i];
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            (shares(p, &up)[i] - 2.0 * f0 + shares(p, &dn)[i]) / (h * h)
        })
        .sum()
}

#[test]
fn hessian_trace_matches_finite_differences() {
    let x = [40.0, 300.0, 7.0, 1200.0, 55.0];
    let a = vec![1.0, 2.5, 0.5, 1.0, 3.0];
    let p = AllotmentProblem::new("x", a, Normalizer::DataDependent).unwrap();
    let data = Dataset::from_counts("x", &x).unwrap();
    for i in 0..x.len() {
        let exact = p.hessian_trace(&data, i).unwrap();
        // Richardson extrapolation cancels the h² truncation term
        let fd = (4.0 * fd_trace(&p, &x, i, 0.5) - fd_trace(&p, &x, i, 1.0)) / 3.0;
        assert!(
            (exact - fd).abs() <= 1e-6 * exact.abs().max(1e-12),
            "entity {i}: {exact} vs {fd}"
        );
    }
}

#[test]
fn fixed_normalizer_is_linear() {
    let p = AllotmentProblem::new("x", vec![1.0, 2.0], Normalizer::FixedConstant(50.0)).unwrap();
    let a = shares(&p, &[10.0, 30.0]);
    assert_eq!(a, vec![0.2, 1.2]);
    let b = shares(&p, &[20.0, 60.0]);
    assert!((b[0] - 2.0 * a[0]).abs() < 1e-15 && (b[1] - 2.0 * a[1]).abs() < 1e-15);
    let data = Dataset::from_counts("x", &[10.0, 30.0]).unwrap();
    assert!(p.hessian_trace(&data, 0).is_err());
}

#[test]
fn non_positive_normalizer_is_reported() {
    let p = AllotmentProblem::uniform("x", 2).unwrap();
    let err = shares_err(&p, &[-5.0, 2.0]);
    assert!(matches!(err, dpfair::Error::NonPositiveNormalizer { z } if z == -3.0));
}

fn shares_err(p: &AllotmentProblem<f64>, x: &[f64]) -> dpfair::Error {
    let d = Dataset::from_counts("x", &[0.0, 0.0])
        .unwrap()
        .with_released_values(x.to_vec())
        .unwrap();
    p.evaluate(&d).unwrap_err()
}

/// Largest L1 change of the share vector over all neighbours `x ± e_j`
/// whose weighted total stays at or above `l`.
fn brute_force_sensitivity(a: &[f64], x: &[f64], l: f64) -> f64 {
    let p = AllotmentProblem::new("x", a.to_vec(), Normalizer::DataDependent).unwrap();
    let base = shares(&p, x);
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        for d in [-1.0, 1.0] {
            let mut y = x.to_vec();
            y[j] += d;
            if y[j] < 0.0 || a.iter().zip(&y).map(|(a, y)| a * y).sum::<f64>() < l {
                continue;
            }
            let s = shares(&p, &y);
            worst = worst.max(base.iter().zip(&s).map(|(u, v)| (u - v).abs()).sum());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shares_form_a_probability_vector(
        x in prop::collection::vec(0u32..10_000, 1..40),
        seed_w in prop::collection::vec(0.1f64..10.0, 40),
    ) {
        prop_assume!(x.iter().any(|&v| v > 0));
        let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let p = AllotmentProblem::new("x", seed_w[..xs.len()].to_vec(), Normalizer::DataDependent).unwrap();
        let out = p.evaluate(&Dataset::from_counts("x", &xs).unwrap()).unwrap();
        prop_assert_eq!(out.kind, OutputKind::Allotment);
        prop_assert!(out.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((out.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neighbour_changes_respect_the_sensitivity_bound(
        x in prop::collection::vec(1u32..200, 2..30),
        w in prop::collection::vec(0.5f64..4.0, 30),
    ) {
        let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let a = &w[..xs.len()];
        let z: f64 = a.iter().zip(&xs).map(|(a, x)| a * x).sum();
        let l = 0.9 * z;
        let bound = pf_sensitivity(a.iter().copied().fold(0.0, f64::max), l).unwrap();
        prop_assert!(brute_force_sensitivity(a, &xs, l) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn linear_problem_is_affine(x in prop::collection::vec(0u32..1000, 1..20), s in -5.0f64..5.0, c in -5.0f64..5.0) {
        let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let out = LinearProblem::new("x", s, c).evaluate(&Dataset::from_counts("x", &xs).unwrap()).unwrap();
        for (o, x) in out.values.iter().zip(&xs) {
            prop_assert!((o - (s * x + c)).abs() < 1e-9);
        }
    }
}

#[test]
fn boolean_operators_match_truth_tables() {
    let table = [
        (BoolOp::And, [false, false, false, true]),
        (BoolOp::Or, [false, true, true, true]),
        (BoolOp::Xor, [false, true, true, false]),
    ];
    for (op, expect) in table {
        for (k, (a, b)) in [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .enumerate()
        {
            assert_eq!(op.apply(a, b), expect[k], "{op:?} {a} {b}");
            // the same table through a compiled rule on count leaves
            let p = Predicate::node(
                op,
                Predicate::count("u", Comparator::Ge, 1.0),
                Predicate::count("v", Comparator::Ge, 1.0),
            );
            let attrs = vec!["u".to_string(), "v".to_string()];
            let data = Dataset::raw(vec!["e".into()], attrs.clone(), vec![a as u8 as f64, b as u8 as f64]).unwrap();
            let out = DecisionRule::new(p, &attrs).unwrap().evaluate(&data).unwrap();
            assert_eq!(out.decisions(), vec![expect[k]]);
        }
    }
}

#[test]
fn minority_rule_on_county_rows() {
    let attrs: Vec<String> = ["x_s", "x_sp", "x_spe"].iter().map(|s| s.to_string()).collect();
    // Loving (80, 4, ·): 4/80 = 0.05 is not above 0.05
    let rows = [
        ([80.0, 4.0, 1.0], false),
        ([1000.0, 100.0, 2.0], true),
        ([1000.0, 100.0, 1.0], false),
        ([1e6, 20_000.0, 300.0], true),
        ([50.0, 0.0, 0.0], false),
    ];
    let values: Vec<f64> = rows.iter().flat_map(|(r, _)| r.to_vec()).collect();
    let ids = (0..rows.len()).map(|i| i.to_string()).collect();
    let data = Dataset::raw(ids, attrs.clone(), values).unwrap();
    let rule = DecisionRule::new(Predicate::minority_language(), &attrs).unwrap();
    let got = rule.evaluate(&data).unwrap().decisions();
    let want: Vec<bool> = rows.iter().map(|r| r.1).collect();
    assert_eq!(got, want);
    // the zero-denominator county is flagged
    assert!(
        Predicate::<f64>::minority_language()
            .eval_predicate(&data, 4)
            .unwrap()
            .1
    );
}

#[test]
fn predicate_json_round_trips_and_validates() {
    let p = Predicate::<f64>::minority_language();
    assert_eq!(Predicate::from_json(&p.to_json()).unwrap(), p);
    let bad = Predicate::<f64>::Leaf(Leaf::Ratio {
        num: "a".into(),
        den: "b".into(),
        level: 1.5,
        cmp: Comparator::Gt,
        proportion: true,
    });
    assert!(Predicate::<f64>::from_json(&bad.to_json()).is_err());
    assert!(DecisionRule::new(p, &["x_s".to_string()]).is_err());
}
