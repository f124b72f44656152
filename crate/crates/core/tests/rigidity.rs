use std::sync::Arc;

use symplift::lift::{ActionSpec, GroupAction, GroupKind};
use symplift::parse_expr;
use symplift::rigidity::{convergence_study, AverageConfig, ConjugatedAction, SuiteConfig};
use symplift::smooth_map::ClosedMap;

fn s(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

#[test]
fn wobbled_circle_residuals_fall_with_node_count() {
    let rho1: Arc<dyn GroupAction> = Arc::new(
        ActionSpec::new(GroupKind::Circle, s(&["t"]), s(&["q"]), vec![true], vec![parse_expr("q + t").unwrap()])
            .unwrap(),
    );
    let h = ClosedMap::new(s(&["q"]), vec![parse_expr("q + 0.05*sin(q)").unwrap()]).unwrap();
    let rho2 = ConjugatedAction::new(rho1.clone(), Arc::new(h)).unwrap();
    let suite = SuiteConfig { samples: 1000, ..SuiteConfig::default() };
    let t = std::time::Instant::now();
    let curve = convergence_study(
        &*rho1,
        &rho2,
        &[256, 512, 1024, 2048],
        &[(-std::f64::consts::PI, std::f64::consts::PI)],
        &AverageConfig::default(),
        &suite,
    )
    .unwrap();
    eprintln!("{curve:#?} in {:?}", t.elapsed());
    for w in curve.windows(2) {
        assert!(w[1].residual_conj < w[0].residual_conj);
    }
    let last = curve.last().unwrap();
    assert!(last.residual_conj <= 1e-6);
    assert!(last.residual_moment <= 1e-6);
    assert!(curve.iter().all(|c| c.node_equivariance <= 1e-12));
}
