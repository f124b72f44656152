use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use super::FlowError;
use crate::expr::{Expr, Program};
use crate::sampling::seeded;
use crate::symplectic::{DarbouxChart, MomentMapSystem, SymplecticError};

#[derive(Debug, Clone, Serialize)]
pub struct S1Config {
    pub samples: usize,
    /// Sample points are drawn from `[-radius, radius]^2n`.
    pub radius: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for S1Config {
    fn default() -> Self {
        S1Config { samples: 200, radius: 1.0, tol: 1e-10, seed: 3 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub samples: usize,
    /// `sup |f(R_theta z) - f(z)|` for rotations of each `(x_i, y_i)` plane.
    pub per_block: Vec<f64>,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

fn rotate_block(z: &mut [f64], n: usize, block: usize, theta: f64) {
    let (c, s) = (theta.cos(), theta.sin());
    let (x, y) = (z[block], z[n + block]);
    z[block] = c * x - s * y;
    z[n + block] = s * x + c * y;
}

/// Sampled invariance of `f` under the standard rotation of each block.
pub fn s1_invariance_check(f: &Expr, chart: &DarbouxChart, cfg: &S1Config) -> Result<InvarianceReport, FlowError> {
    chart.check_expr(f)?;
    let n = chart.dof();
    let prog = Program::compile(std::slice::from_ref(f), &chart.names())?;
    let mut rng = seeded(cfg.seed);
    let mut per_block = vec![0.0f64; n];
    for _ in 0..cfg.samples {
        let z: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-cfg.radius..=cfg.radius)).collect();
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let base = prog.eval(&z)?[0];
        for (b, worst) in per_block.iter_mut().enumerate() {
            let mut w = z.clone();
            rotate_block(&mut w, n, b, theta);
            *worst = worst.max((prog.eval(&w)?[0] - base).abs());
        }
    }
    let residual = per_block.iter().copied().fold(0.0, f64::max);
    Ok(InvarianceReport { samples: cfg.samples, per_block, residual, tol: cfg.tol, pass: residual <= cfg.tol })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileConfig {
    pub nodes: usize,
    /// Profile covers `s = r^2` in `[0, r_max^2]`.
    pub r_max: f64,
    pub fit_tol: f64,
    pub validation_samples: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { nodes: 257, r_max: 1.0, fit_tol: 1e-8, validation_samples: 200, seed: 13 }
    }
}

/// `f = phi(x_b^2 + y_b^2)` on one block, with `phi` a monotone cubic
/// Hermite interpolant in `s = r^2`.
#[derive(Debug, Clone, Serialize)]
pub struct RadialProfile {
    pub block: usize,
    pub s_max: f64,
    pub s: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub slope_at_zero: f64,
    pub monotone: bool,
    /// Strictly increasing on the first interval, so the profile is
    /// invertible past 0.
    pub increasing_near_zero: bool,
    pub degenerate_at_zero: bool,
    pub validation_residual: f64,
    pub validation_bound: f64,
    pub fit_tol: f64,
}

impl RadialProfile {
    fn locate(&self, s: f64) -> (usize, f64, f64) {
        let h = self.s[1] - self.s[0];
        let k = ((s / h).floor().max(0.0) as usize).min(self.s.len() - 2);
        (k, (s - self.s[k]) / h, h)
    }

    pub fn eval(&self, s: f64) -> f64 {
        let (k, t, h) = self.locate(s);
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.values[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.values[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let (k, t, h) = self.locate(s);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.values[k] + (-6.0 * t2 + 6.0 * t) * self.values[k + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slopes[k]
            + (3.0 * t2 - 2.0 * t) * self.slopes[k + 1]
    }

    /// `s` with `phi(s) = v`, for an increasing profile.
    pub fn inverse(&self, v: f64) -> Option<f64> {
        if !self.monotone || !self.increasing_near_zero {
            return None;
        }
        let (mut lo, mut hi) = (0.0, self.s_max);
        if v < self.values[0] || v > *self.values.last()? {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Fritsch-Carlson limiter on exact slopes of monotone data.
fn limit_slopes(values: &[f64], s: &[f64], slopes: &mut [f64]) {
    for k in 0..values.len() - 1 {
        let delta = (values[k + 1] - values[k]) / (s[k + 1] - s[k]);
        if delta == 0.0 {
            slopes[k] = 0.0;
            slopes[k + 1] = 0.0;
            continue;
        }
        let (a, b) = (slopes[k] / delta, slopes[k + 1] / delta);
        if a < 0.0 {
            slopes[k] = 0.0;
        }
        if b < 0.0 {
            slopes[k + 1] = 0.0;
        }
        let r = a.hypot(b);
        if r > 3.0 {
            slopes[k] = 3.0 / r * a * delta;
            slopes[k + 1] = 3.0 / r * b * delta;
        }
    }
}

/// Sample `f` on the ray `x_b = r` (other coordinates 0) and fit `phi`.
pub fn radial_profile(f: &Expr, chart: &DarbouxChart, block: usize, cfg: &ProfileConfig) -> Result<RadialProfile, FlowError> {
    chart.check_expr(f)?;
    let n = chart.dof();
    if block >= n {
        return Err(SymplecticError::DimensionMismatch { expected: n, got: block + 1 }.into());
    }
    let xb = &chart.positions()[block];
    let fx = f.diff(xb);
    let fxx = fx.diff(xb);
    let prog = Program::compile(&[f.clone(), fx, fxx], &chart.names())?;
    let nodes = cfg.nodes.max(3);
    let s_max = cfg.r_max * cfg.r_max;
    let ray = |r: f64| {
        let mut z = vec![0.0; 2 * n];
        z[block] = r;
        z
    };
    let mut s = Vec::with_capacity(nodes);
    let mut values = Vec::with_capacity(nodes);
    let mut slopes = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let sk = s_max * k as f64 / (nodes - 1) as f64;
        let r = sk.sqrt();
        let v = prog.eval(&ray(r))?;
        s.push(sk);
        values.push(v[0]);
        // d phi / ds = f_x / (2 r), and f_xx / 2 in the limit r -> 0
        slopes.push(if k == 0 { 0.5 * v[2] } else { v[1] / (2.0 * r) });
    }
    let slope_at_zero = slopes[0];
    let increasing = values.windows(2).all(|w| w[1] >= w[0]);
    let decreasing = values.windows(2).all(|w| w[1] <= w[0]);
    let monotone = increasing || decreasing;
    if monotone {
        limit_slopes(&values, &s, &mut slopes);
    }
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut profile = RadialProfile {
        block,
        s_max,
        increasing_near_zero: increasing && values[1] > values[0],
        degenerate_at_zero: slope_at_zero.abs() <= 1e-8 * scale,
        s,
        values,
        slopes,
        slope_at_zero,
        monotone,
        validation_residual: 0.0,
        validation_bound: 10.0 * cfg.fit_tol * scale,
        fit_tol: cfg.fit_tol,
    };
    let mut rng = seeded(cfg.seed);
    let mut worst = 0.0f64;
    for _ in 0..cfg.validation_samples {
        let r = cfg.r_max * rng.random_range(0.0f64..=1.0).sqrt();
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut z = vec![0.0; 2 * n];
        z[block] = r * a.cos();
        z[n + block] = r * a.sin();
        let fz = prog.eval(&z)?[0];
        worst = worst.max((fz - profile.eval(r * r)).abs());
    }
    profile.validation_residual = worst;
    if worst > profile.validation_bound {
        return Err(FlowError::NotInvariant { residual: worst, bound: profile.validation_bound });
    }
    Ok(profile)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReduceConfig {
    /// Total degree of the polynomial fits in the invariants.
    pub degree: u32,
    pub radius: f64,
    /// Fit nodes per invariant axis.
    pub grid: usize,
    pub held_out: usize,
    pub tol: f64,
    pub seed: u64,
    pub s1: S1Config,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        ReduceConfig { degree: 4, radius: 1.0, grid: 9, held_out: 200, tol: 1e-9, seed: 17, s1: S1Config::default() }
    }
}

/// `f_j` as a polynomial in `I_1..I_n`.
#[derive(Debug, Clone, Serialize)]
pub struct FittedFunction {
    pub component: usize,
    /// `(exponents, coefficient)` of the retained monomials.
    pub monomials: Vec<(Vec<u32>, f64)>,
    pub formula: String,
    pub residual: f64,
    /// Blocks whose invariant appears in the fit.
    pub depends_on: Vec<usize>,
    /// Blocks it depends on with no linear term, i.e. `d phi / ds = 0` at 0.
    pub degenerate_blocks: Vec<usize>,
}

impl FittedFunction {
    /// The fit as an expression in `I1..In`.
    pub fn to_expr(&self) -> Expr {
        let terms: Vec<Expr> = self
            .monomials
            .iter()
            .map(|(e, c)| {
                e.iter()
                    .enumerate()
                    .fold(Expr::constant(*c), |acc, (i, &k)| acc * Expr::var(&format!("I{}", i + 1)).powi(k as i32))
            })
            .collect();
        Expr::sum(&terms)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedSystem {
    pub invariants: Vec<String>,
    pub fits: Vec<FittedFunction>,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

fn exponents(n: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=degree - used).map(move |k| {
                    let mut e = e.clone();
                    e.push(k);
                    e
                })
            })
            .collect();
    }
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

fn monomial(e: &[u32], inv: &[f64]) -> f64 {
    e.iter().zip(inv).map(|(&k, &i)| i.powi(k as i32)).product()
}

/// Snap to an integer when within roundoff of one, for readable formulas.
fn tidy(c: f64) -> f64 {
    if (c - c.round()).abs() <= 1e-9 * c.abs().max(1.0) { c.round() } else { c }
}

/// Express each component through `I_i = x_i^2 + y_i^2`.
pub fn s1_reduce(system: &MomentMapSystem, cfg: &ReduceConfig) -> Result<ReducedSystem, FlowError> {
    let chart = system.chart();
    let n = chart.dof();
    for (j, f) in system.components().iter().enumerate() {
        let inv = s1_invariance_check(f, chart, &cfg.s1)?;
        for (b, r) in inv.per_block.iter().enumerate() {
            if *r > cfg.s1.tol {
                return Err(FlowError::NotReducible { component: j, block: b, residual: *r });
            }
        }
    }
    let prog = Program::compile(system.components(), &chart.names())?;
    let exps = exponents(n, cfg.degree);
    let grid = cfg.grid.max(cfg.degree as usize + 1);
    let imax = cfg.radius * cfg.radius;
    let total = grid.pow(n as u32);
    let mut design = DMatrix::zeros(total, exps.len());
    let mut targets = DMatrix::zeros(total, system.dof());
    for row in 0..total {
        let mut rem = row;
        let inv: Vec<f64> = (0..n)
            .map(|_| {
                let k = rem % grid;
                rem /= grid;
                imax * k as f64 / (grid - 1) as f64
            })
            .collect();
        let mut z = vec![0.0; 2 * n];
        for (i, v) in inv.iter().enumerate() {
            z[i] = v.sqrt();
        }
        for (c, e) in exps.iter().enumerate() {
            design[(row, c)] = monomial(e, &inv);
        }
        for (j, v) in prog.eval(&z)?.into_iter().enumerate() {
            targets[(row, j)] = v;
        }
    }
    // Householder QR; the design has full column rank since grid > degree
    let qr = design.qr();
    let coeffs = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * &targets))
        .ok_or_else(|| FlowError::InvalidStep("rank-deficient fit design".into()))?;

    let mut rng = seeded(cfg.seed);
    let held: Vec<Vec<f64>> = (0..cfg.held_out)
        .map(|_| {
            let mut z = vec![0.0; 2 * n];
            for b in 0..n {
                let r = cfg.radius * rng.random_range(0.0f64..=1.0).sqrt();
                let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                z[b] = r * a.cos();
                z[n + b] = r * a.sin();
            }
            z
        })
        .collect();
    let mut fits = Vec::new();
    for j in 0..system.dof() {
        let col: Vec<f64> = coeffs.column(j).iter().copied().collect();
        let scale = col.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let monomials: Vec<(Vec<u32>, f64)> = exps
            .iter()
            .zip(&col)
            .filter(|(_, c)| c.abs() > 1e-10 * scale.max(1.0))
            .map(|(e, c)| (e.clone(), tidy(*c)))
            .collect();
        let mut residual = 0.0f64;
        for z in &held {
            let inv: Vec<f64> = (0..n).map(|b| z[b] * z[b] + z[n + b] * z[n + b]).collect();
            let fit: f64 = exps.iter().zip(&col).map(|(e, c)| c * monomial(e, &inv)).sum();
            residual = residual.max((prog.eval(z)?[j] - fit).abs());
        }
        let depends_on: Vec<usize> =
            (0..n).filter(|&b| monomials.iter().any(|(e, _)| e[b] > 0)).collect();
        let degenerate_blocks = depends_on
            .iter()
            .copied()
            .filter(|&b| {
                !monomials
                    .iter()
                    .any(|(e, _)| e[b] == 1 && e.iter().enumerate().all(|(i, &k)| i == b || k == 0))
            })
            .collect();
        let mut fit = FittedFunction { component: j, monomials, formula: String::new(), residual, depends_on, degenerate_blocks };
        fit.formula = fit.to_expr().to_string();
        fits.push(fit);
    }
    let max_residual = fits.iter().map(|f| f.residual).fold(0.0, f64::max);
    let invariants = chart
        .positions()
        .iter()
        .zip(chart.momenta())
        .enumerate()
        .map(|(i, (x, y))| format!("I{} = {x}^2 + {y}^2", i + 1))
        .collect();
    Ok(ReducedSystem { invariants, fits, max_residual, tol: cfg.tol, pass: max_residual <= cfg.tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use proptest::prelude::*;

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn sys(fs: &[&str]) -> MomentMapSystem {
        MomentMapSystem::new(DarbouxChart::standard(2), fs.iter().map(|s| e(s)).collect()).unwrap()
    }

    #[test]
    fn invariance_examples() {
        let chart = DarbouxChart::standard(1);
        let cfg = S1Config::default();
        let r = s1_invariance_check(&e("(x^2 + y^2)^3"), &chart, &cfg).unwrap();
        assert!(r.pass && r.residual <= 1e-12);
        // a quarter turn maps xy to -xy, so the residual reaches 2|xy|
        let r = s1_invariance_check(&e("x*y"), &chart, &cfg).unwrap();
        assert!(!r.pass && r.residual > 0.5);
        let r = s1_invariance_check(&e("x^2 + y^2 + 0.01*x"), &chart, &cfg).unwrap();
        assert!(!r.pass && r.residual > 0.005 && r.residual <= 0.01 * 2.0 * 2f64.sqrt());
    }

    #[test]
    fn profile_examples() {
        let chart = DarbouxChart::standard(1);
        let cfg = ProfileConfig::default();
        let p = radial_profile(&e("(x^2 + y^2)^2"), &chart, 0, &cfg).unwrap();
        assert!(p.validation_residual <= 1e-9);
        assert!(p.degenerate_at_zero && p.increasing_near_zero);
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            assert!((p.eval(s) - s * s).abs() <= 1e-12);
        }
        let p = radial_profile(&e("x^2 + y^2"), &chart, 0, &cfg).unwrap();
        assert!(!p.degenerate_at_zero && (p.eval(0.37) - 0.37).abs() < 1e-14);
        assert!((p.inverse(0.5).unwrap() - 0.5).abs() < 1e-12);
        let wide = ProfileConfig { r_max: 2.0, ..ProfileConfig::default() };
        let p = radial_profile(&e("exp(x^2 + y^2)"), &chart, 0, &wide).unwrap();
        for k in 0..=400 {
            let s = 4.0 * k as f64 / 400.0;
            assert!((p.eval(s) - s.exp()).abs() <= 1e-7);
            assert!((p.derivative(s) - s.exp()).abs() <= 1e-4);
        }
        let err = radial_profile(&e("x^2 + 2*y^2"), &chart, 0, &cfg).unwrap_err();
        assert!(matches!(err, FlowError::NotInvariant { .. }));
    }

    #[test]
    fn reduction_examples() {
        let g = s1_reduce(&sys(&["(x1^2 + y1^2)^2", "x2^2 + y2^2"]), &ReduceConfig::default()).unwrap();
        assert!(g.pass && g.max_residual <= 1e-9);
        assert_eq!(g.fits[0].monomials, vec![(vec![2, 0], 1.0)]);
        assert_eq!(g.fits[1].monomials, vec![(vec![0, 1], 1.0)]);
        assert_eq!(g.fits[0].degenerate_blocks, vec![0]);
        assert!(g.fits[1].degenerate_blocks.is_empty());
        assert_eq!(g.fits[0].formula, "I1^2");

        let f = s1_reduce(&sys(&["x1^2 + y1^2", "x2^2 + y2^2"]), &ReduceConfig::default()).unwrap();
        assert_eq!(f.fits[0].monomials, vec![(vec![1, 0], 1.0)]);

        let err = s1_reduce(&sys(&["x1*y2 - x2*y1", "x1*y1 + x2*y2"]), &ReduceConfig::default()).unwrap_err();
        assert!(matches!(err, FlowError::NotReducible { component: 0, .. }));
    }

    proptest! {
        #[test]
        fn profile_round_trip(a in 0.1f64..2.0, b in 0.0f64..1.0, c in 0.0f64..0.5) {
            let f = e(&format!("{a}*(x^2 + y^2) + {b}*(x^2 + y^2)^2 + {c}*exp(x^2 + y^2)"));
            let p = radial_profile(&f, &DarbouxChart::standard(1), 0, &ProfileConfig::default()).unwrap();
            for k in 0..=50 {
                let s = k as f64 / 50.0;
                let want = a * s + b * s * s + c * s.exp();
                prop_assert!((p.eval(s) - want).abs() <= 1e-7);
            }
        }
    }
}
