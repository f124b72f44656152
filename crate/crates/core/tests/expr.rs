use proptest::prelude::*;

use symplift::{parse_expr, Expr, Program};

/// Expression source over `x` and `y` built from the full grammar.
fn source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("{c:.3}")),
        (1u32..5).prop_map(|k| k.to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            (inner.clone(), 0i32..4).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(0.1*({a}))")),
            inner.prop_map(|a| format!("sqrt(1 + ({a})^2)")),
        ]
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn printing_round_trips(src in source(), x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let e = parse_expr(&src).unwrap();
        let printed = e.to_string();
        let again = parse_expr(&printed).unwrap_or_else(|err| panic!("{printed}: {err}"));
        let a = e.eval_at(&["x", "y"], &[x, y]).unwrap();
        let b = again.eval_at(&["x", "y"], &[x, y]).unwrap();
        prop_assert!(close(a, b, 1e-12), "{src} -> {printed}: {a} vs {b}");
    }

    #[test]
    fn compiled_programs_agree_with_the_tree(src in source(), x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let e = parse_expr(&src).unwrap();
        let p = Program::compile(std::slice::from_ref(&e), &["x", "y"]).unwrap();
        let a = e.eval_at(&["x", "y"], &[x, y]).unwrap();
        prop_assert!(close(p.eval(&[x, y]).unwrap()[0], a, 1e-12));
    }

    #[test]
    fn derivatives_match_central_differences(src in source(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse_expr(&src).unwrap();
        let d = e.diff("x");
        let h = 1e-5;
        let f = |x: f64| e.eval_at(&["x", "y"], &[x, y]).unwrap();
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        let exact = d.eval_at(&["x", "y"], &[x, y]).unwrap();
        let scale = 1.0 + f(x).abs() + exact.abs();
        prop_assert!((fd - exact).abs() <= 1e-5 * scale, "{src}: d/dx = {d}: {exact} vs {fd}");
    }

    #[test]
    fn parsing_arbitrary_text_never_panics(s in "\\PC{0,40}") {
        if let Err(e) = parse_expr(&s) {
            prop_assert!(e.line >= 1 && e.column >= 1);
            prop_assert!(e.line <= s.lines().count().max(1));
        }
    }
}

#[test]
fn errors_point_at_the_offending_token() {
    let e = parse_expr("x +\n  * y").unwrap_err();
    assert_eq!((e.line, e.column), (2, 3));
    let e = parse_expr("sin(x").unwrap_err();
    assert_eq!(e.line, 1);
    assert!(parse_expr("x^1.5").is_err());
    assert!(parse_expr("tan(x)").is_err());
}

#[test]
fn simplification_keeps_derivatives_small() {
    let e = parse_expr("(x^2 + y^2)^2").unwrap();
    assert_eq!(e.diff("x").diff("x").diff("y").diff("y").as_const(), Some(8.0));
    assert!(Expr::var("x").diff("y").is_zero());
}
