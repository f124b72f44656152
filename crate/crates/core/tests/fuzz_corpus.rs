//! Replays the checked-in fuzz seeds on stable, with the same assertions as
//! the fuzz targets.

use std::path::PathBuf;

use symplift::system_file::parse_system_file;
use symplift::{parse_expr, Program};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn expression_seeds() {
    let all = seeds("parse_expr");
    assert!(all.len() >= 10);
    let mut parsed = 0;
    for (name, src) in &all {
        let Ok(e) = parse_expr(src) else { continue };
        parsed += 1;
        let again = parse_expr(&e.to_string()).unwrap_or_else(|err| panic!("{name}: {err}"));
        let names: Vec<String> = e.variables().into_iter().collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let point: Vec<f64> = (0..refs.len()).map(|i| 0.25 + 0.5 * i as f64).collect();
        if let (Ok(a), Ok(b)) = (e.eval_at(&refs, &point), again.eval_at(&refs, &point)) {
            assert!(a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs()), "{name}: {a} vs {b}");
        }
        Program::compile(std::slice::from_ref(&e), &refs).unwrap().eval(&point).ok();
    }
    assert!(parsed > 0 && parsed < all.len(), "seeds should cover both outcomes");
}

#[test]
fn system_file_seeds() {
    let all = seeds("parse_system_file");
    let mut failed = 0;
    for (name, src) in &all {
        if let Err(e) = parse_system_file(src) {
            assert!(e.line >= 1 && e.column >= 1, "{name}: {e}");
            failed += 1;
        }
    }
    assert!(failed > 0 && failed < all.len());
}
