use proptest::prelude::*;

use symplift::lift::{
    check_action_axioms, cotangent_lift, verify_functoriality, verify_lift_invariance, verify_moment_closure,
    verify_moment_invariance, ActionSpec, GroupAction, GroupKind,
};
use symplift::sampling::{sample_box, seeded};
use symplift::parse_expr;

fn s(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

/// Linear flow `q -> exp(t A) q` for a diagonalizable 2x2 `A` with real
/// eigenvalues `l1`, `l2` in the basis `(1, 0)`, `(k, 1)`.
fn linear_flow(l1: f64, l2: f64, k: f64) -> ActionSpec {
    let c1 = format!("exp({l1}*t)*(x1 - {k}*x2) + {k}*exp({l2}*t)*x2");
    let c2 = format!("exp({l2}*t)*x2");
    ActionSpec::new(
        GroupKind::RealLine(1),
        s(&["t"]),
        s(&["x1", "x2"]),
        vec![false, false],
        vec![parse_expr(&c1).unwrap(), parse_expr(&c2).unwrap()],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lifts_of_linear_flows_are_exact_symplectic(l1 in -1.0f64..1.0, l2 in -1.0f64..1.0, k in -1.0f64..1.0, seed in 0u64..100) {
        let spec = linear_flow(l1, l2, k);
        let mut rng = seeded(seed);
        let params = spec.group().sample(&mut rng, 8);
        let base = sample_box(&mut rng, 2, -1.0, 1.0, 16);
        prop_assert!(check_action_axioms(&spec, &params, &base, 1e-12, 1e-10).unwrap().pass);
        let lift = cotangent_lift(&spec).unwrap();
        let pts = sample_box(&mut rng, 4, -1.0, 1.0, 16);
        prop_assert!(verify_lift_invariance(&lift, &params, &pts, 1e-10).unwrap().pass);
        prop_assert!(verify_moment_closure(&lift, &pts, 1e-9).unwrap().pass);
        prop_assert!(verify_moment_invariance(&lift, &params, &pts, 1e-9).unwrap().pass);
        prop_assert!(verify_functoriality(&lift, &params, &pts, 1e-9).unwrap().pass);
    }
}

#[test]
// fundamental fields are generated by exp(-tX), hence the sign
fn rotation_moment_map_is_angular_momentum() {
    let spec = ActionSpec::new(
        GroupKind::Circle,
        s(&["t"]),
        s(&["x1", "x2"]),
        vec![false, false],
        vec![parse_expr("cos(t)*x1 - sin(t)*x2").unwrap(), parse_expr("sin(t)*x1 + cos(t)*x2").unwrap()],
    )
    .unwrap();
    let lift = cotangent_lift(&spec).unwrap();
    let mu = &lift.moment_map()[0];
    let want = parse_expr("x2*y1 - x1*y2").unwrap();
    for z in sample_box(&mut seeded(2), 4, -1.0, 1.0, 20) {
        let names = lift.chart().names();
        assert!((mu.eval_at(&names, &z).unwrap() - want.eval_at(&names, &z).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn non_actions_fail_the_axioms() {
    // composition fails: t -> q + t^2
    let spec =
        ActionSpec::new(GroupKind::RealLine(1), s(&["t"]), s(&["q"]), vec![false], vec![parse_expr("q + t^2").unwrap()])
            .unwrap();
    let mut rng = seeded(9);
    let params = spec.group().sample(&mut rng, 8);
    let r = check_action_axioms(&spec, &params, &[vec![0.3]], 1e-12, 1e-9).unwrap();
    assert!(r.identity.pass && !r.composition.pass);
}
