use disorder_core::detect::FormulaVariant;
use disorder_core::double::{solve_d00, D00Options, FiniteD00, FirstStopRecursion};
use disorder_core::fixtures::{m2, random_model, separated};
use disorder_core::model::{ModelSpec, PriorParams};
use disorder_core::oracle::{double_policy_value, dp_double};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn models() -> Vec<ModelSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut out = vec![
        m2(),
        m2().with_prior(PriorParams::new(0.3, 1.0, 0.8, 0.7)),
        m2().with_prior(PriorParams::new(0.6, 0.0, 0.8, 0.7)),
        separated(PriorParams::new(0.0, 0.3, 0.85, 0.7)),
    ];
    out.extend((0..4).map(|_| random_model(&mut rng, 2, false)));
    out.push(random_model(&mut rng, 3, true));
    out
}

#[test]
fn finite_values_match_dp() {
    for m in models() {
        for n in 0..=8 {
            let dp = dp_double(&m, n).unwrap();
            let fin = FiniteD00::new(&m, n, FirstStopRecursion::Proof).unwrap();
            let v = fin.value(&m, FormulaVariant::Proof);
            assert!((dp.value - v).abs() < 1e-12, "n={n}: dp {} vs {v}", dp.value);
            let pv = double_policy_value(
                &m,
                n,
                &|node| fin.first_stops(&m, &node.states, node.n()),
                &|mm, node| fin.second_stops(&m, &node.states, mm, node.n()),
            )
            .unwrap();
            assert!((dp.value - pv).abs() < 1e-12, "policy n={n}: dp {} vs {pv}", dp.value);
        }
    }
}

#[test]
fn infinite_policy_reconciles() {
    for m in models() {
        let pol = solve_d00(&m, &D00Options::default()).unwrap();
        let v40 = FiniteD00::new(&m, 40, FirstStopRecursion::Proof).unwrap().value(&m, FormulaVariant::Proof);
        let tail = m.prior.theta2_tail(40);
        eprintln!("v {:.10} v40 {:.10} tail {:.3e}", pol.value_at_x0, v40, tail);
        assert!(pol.value_at_x0 >= v40 - 1e-12);
        assert!(pol.value_at_x0 <= v40 + tail + 1e-12);
        let stmt = FiniteD00::new(&m, 8, FirstStopRecursion::Statement).unwrap().value(&m, FormulaVariant::Proof);
        let proof = FiniteD00::new(&m, 8, FirstStopRecursion::Proof).unwrap().value(&m, FormulaVariant::Proof);
        let printed = FiniteD00::new(&m, 8, FirstStopRecursion::Proof).unwrap().value(&m, FormulaVariant::Printed);
        eprintln!("  N=8 proof {proof:.10} statement {stmt:.10} printed-origin {printed:.10}");
    }
}

#[test]
fn forward_success_matches_reported_value() {
    for m in models() {
        let pol = solve_d00(&m, &D00Options::default()).unwrap();
        let v40 = pol.success_within(&m, 40);
        let long = pol.success_within(&m, 3000);
        eprintln!("reported {:.12} forward {:.12} at 40 {:.12}", pol.value_at_x0, long, v40);
        assert!((long - pol.value_at_x0).abs() < 1e-9);
        assert!(v40 <= long + 1e-15);
        assert!(long - v40 <= m.prior.theta2_tail(40) + 1e-12);
    }
}
