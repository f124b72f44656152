#![no_main]
use libfuzzer_sys::fuzz_target;
use symplift::{parse_expr, Program};

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let Ok(e) = parse_expr(src) else { return };
    // printed form must parse back to something that evaluates the same
    let again = parse_expr(&e.to_string()).expect("printed expression reparses");
    let names: Vec<String> = e.variables().into_iter().collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let point: Vec<f64> = (0..refs.len()).map(|i| 0.25 + 0.5 * i as f64).collect();
    if let (Ok(a), Ok(b)) = (e.eval_at(&refs, &point), again.eval_at(&refs, &point)) {
        let same = a == b || (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        assert!(same, "{src:?}: {a} vs {b}");
    }
    if let Ok(p) = Program::compile(std::slice::from_ref(&e), &refs) {
        let _ = p.eval(&point);
    }
    if let Some(v) = refs.first() {
        let _ = e.diff(v);
    }
});
