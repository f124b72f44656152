//! Conjugation of neighbourhoods of elliptic leaves, for systems that split
//! into one-degree-of-freedom blocks.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::Serialize;

use super::RigidityError;
use crate::expr::{gradient, hessian, Expr, Program};
use crate::flows::{action_variable_1dof, ActionConfig, ActionReport, FlowError};
use crate::sampling::{sample_bounds, seeded};
use crate::singularity::critical_points;
use crate::symplectic::{hamiltonian_vector_field, DarbouxChart, MomentMapSystem};

#[derive(Debug, Clone, Serialize)]
pub struct LeafConfig {
    /// Each block is searched for critical points on `[-w, w]^2`.
    pub window: f64,
    pub critical_grid: usize,
    pub critical_tol: f64,
    pub action: ActionConfig,
    /// Sampled levels are `c` and `c +- annulus * max(1, |c|)`.
    pub annulus: f64,
    pub angles: usize,
    /// Relative step for the central differences of the map.
    pub fd_step: f64,
    /// RK4 steps per period when flowing to an angle.
    pub flow_steps: usize,
    pub match_tol: f64,
    pub closeness_samples: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for LeafConfig {
    fn default() -> Self {
        LeafConfig {
            window: 2.0,
            critical_grid: 9,
            critical_tol: 1e-10,
            action: ActionConfig::default(),
            annulus: 0.05,
            angles: 8,
            fd_step: 1e-4,
            flow_steps: 4096,
            match_tol: 1e-13,
            closeness_samples: 500,
            seed: 23,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub system: &'static str,
    pub point: Vec<f64>,
    pub value: f64,
    pub hessian_det: f64,
    pub kind: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockLeaf {
    pub block: usize,
    pub names: [String; 2],
    pub level: f64,
    pub matched_level: f64,
    pub action: f64,
    pub period: f64,
    pub matched_period: f64,
    pub critical_points: Vec<CriticalPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafReport {
    pub dof: usize,
    pub blocks: Vec<BlockLeaf>,
    pub samples: usize,
    /// Largest of the action mismatch between matched levels and the
    /// distance of sampled images from their target leaves.
    pub residual_conj: f64,
    /// `sup |det D phi - 1|` over the annulus samples.
    pub residual_sympl: f64,
    /// `sup |phi(z) - z|`, zero when the leaves coincide.
    pub displacement: f64,
    /// Sampled C0 and C1 distances between the two systems on the window.
    pub c0_distance: f64,
    pub c1_distance: f64,
    pub tol: f64,
    pub pass: bool,
}

/// One block of a split system as a 1-DOF chart.
fn block_chart(chart: &DarbouxChart, i: usize) -> Result<DarbouxChart, RigidityError> {
    let c = DarbouxChart::new(vec![chart.positions()[i].clone()], vec![chart.momenta()[i].clone()])
        .map_err(FlowError::from)?
        .with_orientation(chart.orientation());
    Ok(c)
}

fn check_split(system: &MomentMapSystem, label: &str) -> Result<(), RigidityError> {
    let chart = system.chart();
    for (i, f) in system.components().iter().enumerate() {
        let own = [&chart.positions()[i], &chart.momenta()[i]];
        if let Some(v) = f.variables().iter().find(|v| !own.contains(v)) {
            return Err(RigidityError::Unsupported(format!(
                "{label} component {} uses {v}; only products of 1-DOF blocks are supported",
                i + 1
            )));
        }
    }
    Ok(())
}

fn classify_critical(f: &Expr, chart: &DarbouxChart, label: &'static str, cfg: &LeafConfig) -> Result<Vec<CriticalPoint>, RigidityError> {
    let w = cfg.window;
    let pts = critical_points(f, chart, &[(-w, w), (-w, w)], cfg.critical_grid, cfg.critical_tol).map_err(FlowError::from)?;
    let names = chart.names();
    let h: Vec<Expr> = hessian(f, &names).into_iter().flatten().collect();
    let hp = Program::compile(&h, &names).map_err(FlowError::from)?;
    let fp = Program::compile(std::slice::from_ref(f), &names).map_err(FlowError::from)?;
    let mut out = Vec::new();
    for p in pts {
        let v = hp.eval(&p).map_err(FlowError::from)?;
        let det = v[0] * v[3] - v[1] * v[2];
        let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).powi(2);
        let kind = if det > 1e-8 * scale {
            "elliptic"
        } else if det < -1e-8 * scale {
            "hyperbolic"
        } else {
            "degenerate"
        };
        let value = fp.eval(&p).map_err(FlowError::from)?[0];
        out.push(CriticalPoint { system: label, point: p, value, hessian_det: det, kind });
    }
    Ok(out)
}

struct Block<'a> {
    f: &'a Expr,
    chart: DarbouxChart,
    field: Program,
    value: Program,
    cfg: &'a LeafConfig,
}

impl Block<'_> {
    fn new<'a>(f: &'a Expr, chart: DarbouxChart, cfg: &'a LeafConfig) -> Result<Block<'a>, RigidityError> {
        let field = hamiltonian_vector_field(f, &chart).compile().map_err(FlowError::from)?;
        let value = Program::compile(std::slice::from_ref(f), &chart.names()).map_err(FlowError::from)?;
        Ok(Block { f, chart, field, value, cfg })
    }

    fn level(&self, v: f64) -> Result<ActionReport, RigidityError> {
        Ok(action_variable_1dof(self.f, &self.chart, v, &self.cfg.action)?)
    }

    /// Point at angle `theta` on the level, counted in time from the ray
    /// crossing and normalized by the period.
    fn at(&self, lv: &ActionReport, theta: f64) -> Result<[f64; 2], RigidityError> {
        let t = theta / (2.0 * PI) * lv.period;
        let steps = ((self.cfg.flow_steps as f64 * theta / (2.0 * PI)).ceil() as usize).max(1);
        let h = t / steps as f64;
        let rhs = |z: [f64; 2]| -> Result<[f64; 2], RigidityError> {
            let v = self.field.eval(&z).map_err(FlowError::from)?;
            Ok([v[0], v[1]])
        };
        let mut z = lv.start;
        for _ in 0..steps {
            let k1 = rhs(z)?;
            let k2 = rhs([z[0] + 0.5 * h * k1[0], z[1] + 0.5 * h * k1[1]])?;
            let k3 = rhs([z[0] + 0.5 * h * k2[0], z[1] + 0.5 * h * k2[1]])?;
            let k4 = rhs([z[0] + h * k3[0], z[1] + h * k3[1]])?;
            for i in 0..2 {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        Ok(z)
    }

    /// Level with the given action. `floor` is the value at the enclosed
    /// elliptic point, where the action vanishes.
    fn match_action(&self, action: f64, guess: f64, floor: f64) -> Result<ActionReport, RigidityError> {
        let tol = self.cfg.match_tol * (1.0 + action);
        let g = self.level(guess).ok();
        if let Some(r) = &g {
            if (r.action - action).abs() <= tol {
                return Ok(g.unwrap());
            }
        }
        // bracket between the critical value and a level past the target
        let dir = if guess >= floor { 1.0 } else { -1.0 };
        let mut lo = (floor, -action);
        let mut step = (guess - floor).abs().max(1e-3);
        let mut hi = loop {
            let v = floor + dir * step;
            match self.level(v) {
                Ok(r) if r.action >= action => break (v, r.action - action),
                Ok(r) => lo = (v, r.action - action),
                Err(RigidityError::Flow(FlowError::LevelNotFound { .. })) => {}
                Err(e) => return Err(e),
            }
            step *= 2.0;
            if step > 1e6 * (1.0 + floor.abs()) {
                return Err(RigidityError::Mismatch(format!("no level with action {action} found")));
            }
        };
        // Illinois iteration
        let mut best = None;
        for _ in 0..200 {
            let v = hi.0 - hi.1 * (hi.0 - lo.0) / (hi.1 - lo.1);
            let r = self.level(v)?;
            let gv = r.action - action;
            if gv.abs() <= tol || (hi.0 - lo.0).abs() <= 4.0 * f64::EPSILON * v.abs().max(1.0) {
                return Ok(r);
            }
            if gv.signum() == hi.1.signum() {
                hi = (v, gv);
                lo.1 *= 0.5;
            } else {
                lo = hi;
                hi = (v, gv);
            }
            best = Some(r);
        }
        best.ok_or_else(|| RigidityError::Mismatch(format!("no level with action {action} found")))
    }
}

/// Level data at `v` for both systems, matched by action.
struct Pair {
    src: ActionReport,
    dst: ActionReport,
}

/// Build `phi_c` blockwise from action-angle coordinates of `F` and `F̂`
/// around the leaf `F = c`, and measure it on an annulus of levels.
pub fn elliptic_leaf_rigidity_experiment(
    f: &MomentMapSystem,
    f_hat: &MomentMapSystem,
    c: &[f64],
    cfg: &LeafConfig,
) -> Result<LeafReport, RigidityError> {
    let n = f.dof();
    let chart = f.chart();
    if f_hat.chart().names() != chart.names() {
        return Err(RigidityError::Mismatch("the two systems use different charts".into()));
    }
    if c.len() != n {
        return Err(RigidityError::Mismatch(format!("{n} components but {} levels", c.len())));
    }
    check_split(f, "F")?;
    check_split(f_hat, "F̂")?;

    let mut blocks = Vec::new();
    let (mut residual_conj, mut residual_sympl, mut displacement) = (0.0f64, 0.0f64, 0.0f64);
    let mut samples = 0;
    for i in 0..n {
        let bc = block_chart(chart, i)?;
        let mut crit = classify_critical(&f.components()[i], &bc, "F", cfg)?;
        crit.extend(classify_critical(&f_hat.components()[i], &bc, "F̂", cfg)?);
        if let Some(bad) = crit.iter().find(|p| p.kind != "elliptic") {
            return Err(RigidityError::HypothesisViolated(format!(
                "{} block {} has a {} critical point at {:?}; only elliptic singularities are allowed",
                bad.system,
                i + 1,
                bad.kind,
                bad.point
            )));
        }
        let src = Block::new(&f.components()[i], bc.clone(), cfg)?;
        let dst = Block::new(&f_hat.components()[i], bc, cfg)?;
        let floor = enclosed_value(&crit, "F̂", cfg)?;
        let pair = |v: f64, guess: f64| -> Result<Pair, RigidityError> {
            let s = src.level(v)?;
            let d = dst.match_action(s.action, guess, floor)?;
            Ok(Pair { src: s, dst: d })
        };
        let centre = pair(c[i], c[i])?;
        let matched = centre.dst.level;
        let width = cfg.annulus * c[i].abs().max(1.0);
        let dv = cfg.fd_step * c[i].abs().max(1.0);
        let dtheta = cfg.fd_step;
        for (v, guess) in [(c[i] - width, matched - width), (c[i], matched), (c[i] + width, matched + width)] {
            let mid = if v == c[i] { Pair { src: centre.src.clone(), dst: centre.dst.clone() } } else { pair(v, guess)? };
            let lo = pair(v - dv, mid.dst.level - dv)?;
            let hi = pair(v + dv, mid.dst.level + dv)?;
            for p in [&mid, &lo, &hi] {
                residual_conj = residual_conj.max((p.src.action - p.dst.action).abs());
            }
            for k in 0..cfg.angles {
                let theta = 2.0 * PI * (k as f64 + 0.5) / cfg.angles as f64;
                let z = src.at(&mid.src, theta)?;
                let w = dst.at(&mid.dst, theta)?;
                residual_conj = residual_conj
                    .max((src.value.eval(&z).map_err(FlowError::from)?[0] - mid.src.level).abs())
                    .max((dst.value.eval(&w).map_err(FlowError::from)?[0] - mid.dst.level).abs());
                displacement = displacement.max((z[0] - w[0]).hypot(z[1] - w[1]));
                // Jacobians of both sides in (level, angle) coordinates
                let jac = |b: &Block, lo: &ActionReport, hi: &ActionReport, lv: &ActionReport| -> Result<Matrix2<f64>, RigidityError> {
                    let zl = b.at(lo, theta)?;
                    let zh = b.at(hi, theta)?;
                    let za = b.at(lv, theta - dtheta)?;
                    let zb = b.at(lv, theta + dtheta)?;
                    Ok(Matrix2::new(
                        (zh[0] - zl[0]) / (2.0 * dv),
                        (zb[0] - za[0]) / (2.0 * dtheta),
                        (zh[1] - zl[1]) / (2.0 * dv),
                        (zb[1] - za[1]) / (2.0 * dtheta),
                    ))
                };
                let js = jac(&src, &lo.src, &hi.src, &mid.src)?;
                let jd = jac(&dst, &lo.dst, &hi.dst, &mid.dst)?;
                let det = jd.determinant() / js.determinant();
                residual_sympl = residual_sympl.max((det - 1.0).abs());
                samples += 1;
            }
        }
        blocks.push(BlockLeaf {
            block: i,
            names: [chart.positions()[i].clone(), chart.momenta()[i].clone()],
            level: c[i],
            matched_level: matched,
            action: centre.src.action,
            period: centre.src.period,
            matched_period: centre.dst.period,
            critical_points: crit,
        });
    }

    let (c0_distance, c1_distance) = closeness(f, f_hat, cfg)?;
    Ok(LeafReport {
        dof: n,
        blocks,
        samples,
        residual_conj,
        residual_sympl,
        displacement,
        c0_distance,
        c1_distance,
        tol: cfg.tol,
        pass: residual_conj <= cfg.tol && residual_sympl <= cfg.tol,
    })
}

/// Value at the elliptic point nearest the action centre.
fn enclosed_value(crit: &[CriticalPoint], label: &str, cfg: &LeafConfig) -> Result<f64, RigidityError> {
    let [cx, cy] = cfg.action.center;
    let p = crit
        .iter()
        .filter(|p| p.system == label)
        .min_by(|a, b| (a.point[0] - cx).hypot(a.point[1] - cy).total_cmp(&(b.point[0] - cx).hypot(b.point[1] - cy)))
        .ok_or_else(|| RigidityError::HypothesisViolated(format!("{label} has no elliptic point inside the leaf")))?;
    Ok(p.value)
}

fn closeness(f: &MomentMapSystem, f_hat: &MomentMapSystem, cfg: &LeafConfig) -> Result<(f64, f64), RigidityError> {
    let chart = f.chart();
    let names = chart.names();
    let diff: Vec<Expr> = f.components().iter().zip(f_hat.components()).map(|(a, b)| a - b).collect();
    let grads: Vec<Expr> = diff.iter().flat_map(|d| gradient(d, &names)).collect();
    let vp = Program::compile(&diff, &names).map_err(FlowError::from)?;
    let gp = Program::compile(&grads, &names).map_err(FlowError::from)?;
    let bounds = vec![(-cfg.window, cfg.window); chart.dim()];
    let (mut c0, mut c1) = (0.0f64, 0.0f64);
    for z in sample_bounds(&mut seeded(cfg.seed), &bounds, cfg.closeness_samples) {
        c0 = vp.eval(&z).map_err(FlowError::from)?.iter().fold(c0, |a, v| a.max(v.abs()));
        c1 = gp.eval(&z).map_err(FlowError::from)?.iter().fold(c1, |a, v| a.max(v.abs()));
    }
    Ok((c0, c1))
}
