use std::f64::consts::PI;

use serde::Serialize;

use super::FlowError;
use crate::expr::{Expr, Program};
use crate::symplectic::{hamiltonian_vector_field, DarbouxChart, SymplecticError};

#[derive(Debug, Clone, Serialize)]
pub struct ActionConfig {
    /// Marked point inside the level curve; the start point is searched on
    /// the ray from it in direction `angle`.
    pub center: [f64; 2],
    pub angle: f64,
    /// RK4 steps per turn, measured in arc length against the start radius.
    pub arc_steps: usize,
    pub max_steps: usize,
    pub ray_max: f64,
    pub critical_tol: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig { center: [0.0, 0.0], angle: 0.0, arc_steps: 4096, max_steps: 10_000_000, ray_max: 1e3, critical_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionReport {
    pub level: f64,
    pub action: f64,
    pub area: f64,
    /// Time of one turn under the flow of `f`.
    pub period: f64,
    pub start: [f64; 2],
    pub steps: usize,
    /// Distance between the start and the traced return point.
    pub closure_error: f64,
}

struct Tracer {
    field: Program,
    center: [f64; 2],
    critical_tol: f64,
}

impl Tracer {
    /// Arc-length derivative of `(x, y, area, time)`.
    fn rhs(&self, s: &[f64; 4]) -> Result<[f64; 4], FlowError> {
        let v = self.field.eval(&s[..2])?;
        let speed = v[0].hypot(v[1]);
        if speed <= self.critical_tol || !speed.is_finite() {
            return Err(FlowError::CriticalLevel { level: f64::NAN, gradient: speed });
        }
        let (ux, uy) = (v[0] / speed, v[1] / speed);
        let (dx, dy) = (s[0] - self.center[0], s[1] - self.center[1]);
        Ok([ux, uy, 0.5 * (dx * uy - dy * ux), 1.0 / speed])
    }

    fn step(&self, s: &[f64; 4], h: f64) -> Result<[f64; 4], FlowError> {
        let add = |a: &[f64; 4], k: &[f64; 4], c: f64| std::array::from_fn::<f64, 4, _>(|i| a[i] + c * k[i]);
        let k1 = self.rhs(s)?;
        let k2 = self.rhs(&add(s, &k1, 0.5 * h))?;
        let k3 = self.rhs(&add(s, &k2, 0.5 * h))?;
        let k4 = self.rhs(&add(s, &k3, h))?;
        Ok(std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
    }
}

/// First crossing of `{f = c}` on the ray `center + r (cos a, sin a)`.
fn find_start(f: &Program, c: f64, cfg: &ActionConfig) -> Result<[f64; 2], FlowError> {
    let (ca, sa) = (cfg.angle.cos(), cfg.angle.sin());
    let at = |r: f64| -> Result<f64, FlowError> {
        Ok(f.eval(&[cfg.center[0] + r * ca, cfg.center[1] + r * sa])?[0] - c)
    };
    let g0 = at(0.0)?;
    let (mut lo, mut hi) = (0.0, 1e-3);
    loop {
        let g = at(hi)?;
        if g == 0.0 || g.signum() != g0.signum() {
            break;
        }
        lo = hi;
        hi *= 1.1;
        if hi > cfg.ray_max {
            return Err(FlowError::LevelNotFound { level: c });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid)?.signum() == g0.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    Ok([cfg.center[0] + r * ca, cfg.center[1] + r * sa])
}

/// Newton on `grad f = 0` from `guess`; a zero within `radius` of the
/// curve on the level `c` makes the level critical.
fn nearby_critical_point(
    f: &Expr,
    chart: &DarbouxChart,
    guess: [f64; 2],
    c: f64,
    radius: f64,
) -> Result<Option<f64>, FlowError> {
    let names = chart.names();
    let grad = [f.diff(names[0]), f.diff(names[1])];
    let hess = [grad[0].diff(names[0]), grad[0].diff(names[1]), grad[1].diff(names[1])];
    let prog = Program::compile(&[f.clone(), grad[0].clone(), grad[1].clone(), hess[0].clone(), hess[1].clone(), hess[2].clone()], &names)?;
    let mut q = guess;
    for _ in 0..30 {
        let v = prog.eval(&q)?;
        let det = v[3] * v[5] - v[4] * v[4];
        if det == 0.0 || !det.is_finite() {
            return Ok(None);
        }
        let dx = (v[5] * v[1] - v[4] * v[2]) / det;
        let dy = (v[3] * v[2] - v[4] * v[1]) / det;
        q = [q[0] - dx, q[1] - dy];
        if (q[0] - guess[0]).hypot(q[1] - guess[1]) > radius {
            return Ok(None);
        }
        if dx.hypot(dy) <= 1e-14 * (1.0 + q[0].hypot(q[1])) {
            break;
        }
    }
    let v = prog.eval(&q)?;
    let g = v[1].hypot(v[2]);
    let on_level = (v[0] - c).abs() <= 1e-8 * (1.0 + c.abs());
    Ok((g <= 1e-10 && on_level).then_some(g))
}

/// `(1 / 2 pi) * area enclosed by {f = c}`, by tracing the level curve once.
pub fn action_variable_1dof(f: &Expr, chart: &DarbouxChart, c: f64, cfg: &ActionConfig) -> Result<ActionReport, FlowError> {
    if chart.dof() != 1 {
        return Err(SymplecticError::DimensionMismatch { expected: 2, got: chart.dim() }.into());
    }
    chart.check_expr(f)?;
    let names = chart.names();
    let fp = Program::compile(std::slice::from_ref(f), &names)?;
    let start = find_start(&fp, c, cfg)?;
    let tracer = Tracer { field: hamiltonian_vector_field(f, chart).compile()?, center: cfg.center, critical_tol: cfg.critical_tol };
    let critical = |e: FlowError| match e {
        FlowError::CriticalLevel { gradient, .. } => FlowError::CriticalLevel { level: c, gradient },
        other => other,
    };
    let s0 = [start[0], start[1], 0.0, 0.0];
    let d0 = tracer.rhs(&s0).map_err(critical)?;
    let normal = [d0[0], d0[1]];
    let r0 = (start[0] - cfg.center[0]).hypot(start[1] - cfg.center[1]).max(1e-6);
    let h = 2.0 * PI * r0 / cfg.arc_steps as f64;
    let sigma = |s: &[f64; 4]| (s[0] - start[0]) * normal[0] + (s[1] - start[1]) * normal[1];
    let dist = |s: &[f64; 4]| (s[0] - start[0]).hypot(s[1] - start[1]);
    let escape = 1e6 * r0.max(1.0);

    let mut s = s0;
    let mut armed = false;
    let mut slowest = (f64::INFINITY, start);
    for k in 0..cfg.max_steps {
        let next = tracer.step(&s, h).map_err(critical)?;
        if dist(&next) > 10.0 * h {
            armed = true;
        }
        let speed = 1.0 / tracer.rhs(&next).map_err(critical)?[3];
        if speed < slowest.0 {
            slowest = (speed, [next[0], next[1]]);
        }
        if armed && sigma(&s) < 0.0 && sigma(&next) >= 0.0 && dist(&next) < 10.0 * h {
            // Newton on the step length so the last step lands on the section
            let mut tau = h * sigma(&s) / (sigma(&s) - sigma(&next));
            let mut end = tracer.step(&s, tau).map_err(critical)?;
            for _ in 0..8 {
                let d = tracer.rhs(&end).map_err(critical)?;
                let rate = d[0] * normal[0] + d[1] * normal[1];
                let dt = sigma(&end) / rate;
                tau -= dt;
                end = tracer.step(&s, tau).map_err(critical)?;
                if dt.abs() <= 1e-16 * h {
                    break;
                }
            }
            if let Some(g) = nearby_critical_point(f, chart, slowest.1, c, 10.0 * h)? {
                return Err(FlowError::CriticalLevel { level: c, gradient: g });
            }
            let area = end[2].abs();
            return Ok(ActionReport {
                level: c,
                action: area / (2.0 * PI),
                area,
                period: end[3],
                start,
                steps: k + 1,
                closure_error: dist(&end),
            });
        }
        if dist(&next) > escape {
            return Err(FlowError::NonCompactLevel { steps: k + 1 });
        }
        s = next;
    }
    Err(FlowError::NonCompactLevel { steps: cfg.max_steps })
}
