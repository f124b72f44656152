use serde::Serialize;

use super::FlowError;
use crate::expr::{Expr, Program};
use crate::symplectic::{hamiltonian_vector_field, DarbouxChart, MomentMapSystem};

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub scheme: &'static str,
    pub dt: f64,
    pub steps: usize,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.points.last().expect("a trajectory has its start point")
    }
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Implicit midpoint steps `z' = z + dt X_H((z + z') / 2)`, each solved by
/// fixed-point iteration.
pub fn symplectic_integrate(
    h: &Expr,
    chart: &DarbouxChart,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory, FlowError> {
    chart.check_point(x0)?;
    chart.check_expr(h)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    let field: Program = hamiltonian_vector_field(h, chart).compile()?;
    let dim = x0.len();
    let mut regs = field.scratch();
    let mut v = vec![0.0; dim];
    let mut mid = vec![0.0; dim];
    let mut points = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    points.push(x0.to_vec());
    times.push(0.0);
    let mut z = x0.to_vec();
    for step in 0..steps {
        field.eval_into(&z, &mut regs, &mut v)?;
        let mut next: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
        let mut converged = false;
        let mut last = f64::INFINITY;
        for _ in 0..FIXED_POINT_MAX_ITER {
            for i in 0..dim {
                mid[i] = 0.5 * (z[i] + next[i]);
            }
            field.eval_into(&mid, &mut regs, &mut v)?;
            let mut change = 0.0f64;
            for i in 0..dim {
                let updated = z[i] + dt * v[i];
                change = change.max((updated - next[i]).abs());
                next[i] = updated;
            }
            if !change.is_finite() {
                break;
            }
            // past the tolerance, keep sweeping while the update still shrinks
            if converged && (change >= last || change == 0.0) {
                break;
            }
            if change <= FIXED_POINT_TOL * (1.0 + amax(&next)) {
                converged = true;
                if change == 0.0 {
                    break;
                }
            }
            last = change;
        }
        if !converged {
            return Err(FlowError::FixedPointDivergence { step, t: step as f64 * dt });
        }
        z = next;
        points.push(z.clone());
        times.push((step + 1) as f64 * dt);
    }
    Ok(Trajectory {
        scheme: "implicit_midpoint",
        dt,
        steps,
        fixed_point_tol: FIXED_POINT_TOL,
        max_iterations: FIXED_POINT_MAX_ITER,
        times,
        points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    /// `max_t |f_i(z_t) - f_i(z_0)|` per component.
    pub drifts: Vec<f64>,
    pub max_drift: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn conserved_along_flow(
    system: &MomentMapSystem,
    traj: &Trajectory,
    tol: f64,
) -> Result<ConservationReport, FlowError> {
    let f = Program::compile(system.components(), &system.chart().names())?;
    let start = f.eval(&traj.points[0])?;
    let mut drifts = vec![0.0f64; start.len()];
    let mut regs = f.scratch();
    let mut vals = vec![0.0; start.len()];
    for z in &traj.points {
        f.eval_into(z, &mut regs, &mut vals)?;
        for (d, (v, s)) in drifts.iter_mut().zip(vals.iter().zip(&start)) {
            *d = d.max((v - s).abs());
        }
    }
    let max_drift = drifts.iter().copied().fold(0.0, f64::max);
    Ok(ConservationReport { drifts, max_drift, tol, pass: max_drift <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn quadratic_energy_is_kept_to_roundoff() {
        let chart = DarbouxChart::standard(1);
        let t = symplectic_integrate(&e("x^2 + y^2"), &chart, &[1.0, 0.0], 1e-2, 10_000).unwrap();
        assert_eq!(t.points.len(), 10_001);
        let z = t.last();
        assert!((z[0] * z[0] + z[1] * z[1] - 1.0).abs() <= 1e-12);
        // the midpoint rule rotates by 2 atan(dt) per step
        let angle = 10_000.0 * 2.0 * (1e-2f64).atan();
        assert!((z[0] - angle.cos()).abs() < 1e-9 && (z[1] - angle.sin()).abs() < 1e-9);
    }

    #[test]
    fn linear_hamiltonian_moves_along_y() {
        let chart = DarbouxChart::standard(1);
        let t = symplectic_integrate(&e("x"), &chart, &[0.0, 0.0], 0.1, 10).unwrap();
        for (time, z) in t.times.iter().zip(&t.points) {
            assert!(z[0].abs() < 1e-15 && (z[1] - time).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_energy_drift_is_small() {
        let chart = DarbouxChart::standard(1);
        let t = symplectic_integrate(&e("(x^2 + y^2)^2"), &chart, &[1.0, 0.0], 1e-3, 10_000).unwrap();
        let z = t.last();
        assert!(((z[0] * z[0] + z[1] * z[1]).powi(2) - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn large_steps_diverge() {
        let chart = DarbouxChart::standard(1);
        let err = symplectic_integrate(&e("(x^2 + y^2)^2"), &chart, &[3.0, 0.0], 1.0, 5).unwrap_err();
        assert!(matches!(err, FlowError::FixedPointDivergence { step: 0, .. }));
        assert!(symplectic_integrate(&e("x"), &chart, &[0.0, 0.0], 0.0, 5).is_err());
    }

    #[test]
    fn conservation_examples() {
        let chart = DarbouxChart::standard(2);
        let f = MomentMapSystem::new(chart.clone(), vec![e("x1^2 + y1^2"), e("x2^2 + y2^2")]).unwrap();
        let t = symplectic_integrate(&f.components()[0], &chart, &[0.3, 0.5, -0.2, 0.1], 1e-2, 2000).unwrap();
        let r = conserved_along_flow(&f, &t, 1e-10).unwrap();
        assert!(r.pass, "{r:?}");

        let c1 = DarbouxChart::standard(1);
        let xy = MomentMapSystem::new(c1.clone(), vec![e("x")]).unwrap();
        let t = symplectic_integrate(&e("y"), &c1, &[0.0, 0.0], 0.01, 100).unwrap();
        let r = conserved_along_flow(&xy, &t, 1e-10).unwrap();
        assert!((r.drifts[0] - 1.0).abs() < 1e-12);
        assert!(!r.pass);
    }
}
