use proptest::prelude::*;

use symplift::singularity::{classify_point, scan_singular_points, SingularityConfig};
use symplift::{parse_expr, DarbouxChart, MomentMapSystem};

fn system(n: usize, fs: &[String]) -> MomentMapSystem {
    MomentMapSystem::new(DarbouxChart::standard(n), fs.iter().map(|f| parse_expr(f).unwrap()).collect()).unwrap()
}

proptest! {
    /// `a x^2 + 2 b x y + c y^2` is elliptic iff `ac - b^2 > 0`.
    #[test]
    fn one_degree_of_freedom_quadratics(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let disc = a * c - b * b;
        prop_assume!(disc.abs() > 1e-3);
        let f = format!("{a}*x^2 + {}*x*y + {c}*y^2", 2.0 * b);
        let r = classify_point(&system(1, &[f]), &[0.0, 0.0], &SingularityConfig::default()).unwrap().unwrap();
        let t = r.williamson.unwrap().as_tuple();
        prop_assert_eq!(t, if disc > 0.0 { (1, 0, 0) } else { (0, 1, 0) });
        prop_assert_eq!(r.eigen_data.len(), 1);
    }

    /// Positive rescaling of components does not change the type.
    #[test]
    fn rescaling_components(s1 in 0.2f64..5.0, s2 in 0.2f64..5.0) {
        let cfg = SingularityConfig::default();
        for (fs, want) in [
            (["x1^2 + y1^2", "x2*y2"], (1, 1, 0)),
            (["x1*y2 - x2*y1", "x1*y1 + x2*y2"], (0, 0, 1)),
        ] {
            let scaled = [format!("{s1}*({})", fs[0]), format!("{s2}*({})", fs[1])];
            let r = classify_point(&system(2, &scaled), &[0.0; 4], &cfg).unwrap().unwrap();
            prop_assert_eq!(r.williamson.unwrap().as_tuple(), want);
        }
    }
}

#[test]
fn flat_points_are_degenerate_not_errors() {
    let cfg = SingularityConfig::default();
    for f in ["x^4 + y^4", "x^3", "(x^2 + y^2)^2"] {
        let r = classify_point(&system(1, &[f.to_string()]), &[0.0, 0.0], &cfg).unwrap().unwrap();
        assert!(r.degenerate, "{f}");
        assert!(r.williamson.is_none());
    }
}

#[test]
fn regular_points_are_skipped_by_scans() {
    let sys = system(1, &["x^2 + y^2".to_string()]);
    let scan = scan_singular_points(&sys, &[(-1.0, 1.0), (-1.0, 1.0)], 5, 10, &SingularityConfig::default()).unwrap();
    assert_eq!(scan.nodes, 25);
    assert_eq!(scan.singular_nodes, 1);
    assert_eq!(scan.points[0].point, vec![0.0, 0.0]);
    assert!(classify_point(&sys, &[0.5, 0.0], &SingularityConfig::default()).unwrap().is_none());
}

#[test]
fn classification_is_seed_deterministic() {
    let sys = system(2, &["x1*y2 - x2*y1".into(), "x1*y1 + x2*y2".into()]);
    let cfg = SingularityConfig::default();
    let a = serde_json::to_string(&classify_point(&sys, &[0.0; 4], &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&classify_point(&sys, &[0.0; 4], &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}
