use proptest::prelude::*;

use symplift::linalg::random_symplectic;
use symplift::sampling::{sample_box, seeded};
use symplift::symplectic::{hamiltonian_vector_field, is_symplectomorphism, poisson_bracket, symplecticity_residual};
use symplift::{DarbouxChart, Expr, Orientation, Program};

/// Random polynomial of degree <= 3 in the chart variables.
fn polynomial(chart: &DarbouxChart, coeffs: &[f64]) -> Expr {
    let vars = chart.names();
    let mut terms = Vec::new();
    let mut k = 0;
    for i in 0..vars.len() {
        for j in i..vars.len() {
            let mono = Expr::var(vars[i]) * Expr::var(vars[j]);
            terms.push(Expr::constant(coeffs[k % coeffs.len()]) * &mono);
            terms.push(Expr::constant(coeffs[(k + 1) % coeffs.len()]) * mono * Expr::var(vars[(i + j) % vars.len()]));
            k += 2;
        }
    }
    Expr::sum(&terms)
}

fn eval(e: &Expr, chart: &DarbouxChart, z: &[f64]) -> f64 {
    Program::compile(std::slice::from_ref(e), &chart.names()).unwrap().eval(z).unwrap()[0]
}

proptest! {
    #[test]
    fn bracket_is_antisymmetric_and_satisfies_jacobi(
        a in prop::collection::vec(-1.0f64..1.0, 5),
        b in prop::collection::vec(-1.0f64..1.0, 5),
        c in prop::collection::vec(-1.0f64..1.0, 5),
        z in prop::collection::vec(-1.0f64..1.0, 4),
        cotangent in any::<bool>(),
    ) {
        let mut chart = DarbouxChart::standard(2);
        if cotangent {
            chart = chart.with_orientation(Orientation::Cotangent);
        }
        let (f, g, h) = (polynomial(&chart, &a), polynomial(&chart, &b), polynomial(&chart, &c));
        let fg = eval(&poisson_bracket(&f, &g, &chart), &chart, &z);
        let gf = eval(&poisson_bracket(&g, &f, &chart), &chart, &z);
        prop_assert!((fg + gf).abs() < 1e-12);
        let jacobi = poisson_bracket(&f, &poisson_bracket(&g, &h, &chart), &chart)
            + poisson_bracket(&g, &poisson_bracket(&h, &f, &chart), &chart)
            + poisson_bracket(&h, &poisson_bracket(&f, &g, &chart), &chart);
        prop_assert!(eval(&jacobi, &chart, &z).abs() < 1e-10);
    }

    #[test]
    fn linear_symplectic_maps_pass(seed in 0u64..1000, n in 1usize..4) {
        let chart = DarbouxChart::standard(n);
        let a = random_symplectic(n, 0.5, &mut seeded(seed));
        prop_assert!(symplecticity_residual(&a, &chart.omega()) < 1e-12);
        let vars = chart.names();
        let map: Vec<Expr> = (0..2 * n)
            .map(|i| Expr::sum(&(0..2 * n).map(|j| Expr::constant(a[(i, j)]) * Expr::var(vars[j])).collect::<Vec<_>>()))
            .collect();
        let pts = sample_box(&mut seeded(seed + 1), 2 * n, -1.0, 1.0, 10);
        prop_assert!(is_symplectomorphism(&map, &chart, &pts, 1e-10).unwrap().pass);
    }
}

#[test]
fn hamiltonian_fields_follow_the_chart_orientation() {
    let chart = DarbouxChart::standard(1);
    let h = symplift::parse_expr("x^2 + y^2").unwrap();
    let x = hamiltonian_vector_field(&h, &chart).eval(&[1.0, 0.5]).unwrap();
    assert_eq!(x, vec![-1.0, 2.0]);
    // the two orientations differ by the sign of omega
    let q = Expr::var("x");
    let p = Expr::var("y");
    let std = poisson_bracket(&q, &p, &chart).as_const().unwrap();
    let cot = poisson_bracket(&q, &p, &chart.clone().with_orientation(Orientation::Cotangent)).as_const().unwrap();
    assert_eq!(std, -cot);
}

#[test]
fn shears_are_symplectic_and_scalings_are_not() {
    let chart = DarbouxChart::standard(1);
    let pts = sample_box(&mut seeded(4), 2, -1.0, 1.0, 20);
    let shear = [symplift::parse_expr("x").unwrap(), symplift::parse_expr("y + sin(x)").unwrap()];
    assert!(is_symplectomorphism(&shear, &chart, &pts, 1e-12).unwrap().pass);
    let scale = [symplift::parse_expr("2*x").unwrap(), symplift::parse_expr("y").unwrap()];
    assert!(!is_symplectomorphism(&scale, &chart, &pts, 1e-12).unwrap().pass);
}
