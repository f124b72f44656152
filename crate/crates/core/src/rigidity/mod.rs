//! Conjugating close compact-group actions by averaging, and checking the
//! conjugacy and its cotangent lift at random samples.
//!
//! For actions `rho1`, `rho2` of the same abelian group the averaged map is
//! `phi(x) = mean_g rho1(g)^{-1}(rho2(g)(x))`, taken over a uniform subgroup
//! of nodes. On angle coordinates the mean is a circular mean, computed as
//! `x` plus the mean of wrapped displacements.

mod grid;
mod leaf;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::lift::{lift_apply, lift_moment, wrap_angle, wrapped_distance, ActionSpec, GroupAction, GroupKind, LiftError};
use crate::sampling::seeded;
use crate::smooth_map::{lift_conjugation, ClosedMap, Jet, MapError, SmoothMap};
use crate::symplectic::symplecticity_residual;

pub use grid::{Axis, GridMap, Interpolation};
pub use leaf::{elliptic_leaf_rigidity_experiment, BlockLeaf, CriticalPoint, LeafConfig, LeafReport};

pub const AVERAGE_FORMULA: &str = "phi(x) = mean over nodes g of rho1(g)^-1 (rho2(g) x)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigidityError {
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("averaging needs a compact group, got {0:?}")]
    NonCompactGroup(GroupKind),
    #[error("actions differ in group or base: {0}")]
    Mismatch(String),
    #[error("actions are not close at {point:?}: displacement {displacement:.3e} exceeds {bound:.3e}")]
    NotClose { point: Vec<f64>, displacement: f64, bound: f64 },
    #[error("orbit cloud at {point:?} is not inside a half circle (spread {spread:.3})")]
    CloudTooSpread { point: Vec<f64>, spread: f64 },
    #[error(transparent)]
    Flow(#[from] crate::flows::FlowError),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("unsupported system: {0}")]
    Unsupported(String),
    #[error("averaged map is not invertible: min |det| {min_det:.3e} below {threshold:.1e}")]
    NonInvertible { min_det: f64, threshold: f64 },
}

/// Uniform nodes on a torus group, `per_axis` per circle factor.
#[derive(Debug, Clone, Serialize)]
pub struct GroupQuadrature {
    pub kind: GroupKind,
    pub per_axis: usize,
    #[serde(skip)]
    pub nodes: Vec<Vec<f64>>,
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl GroupQuadrature {
    pub fn uniform(kind: &GroupKind, per_axis: usize) -> Result<Self, RigidityError> {
        if !kind.is_compact() || per_axis == 0 {
            return Err(RigidityError::NonCompactGroup(kind.clone()));
        }
        let d = kind.dim();
        let total = per_axis.pow(d as u32);
        let step = 2.0 * PI / per_axis as f64;
        let nodes: Vec<Vec<f64>> = (0..total)
            .map(|mut k| {
                let mut g = vec![0.0; d];
                for a in (0..d).rev() {
                    g[a] = (k % per_axis) as f64 * step;
                    k /= per_axis;
                }
                g
            })
            .collect();
        Ok(GroupQuadrature { kind: kind.clone(), per_axis, weights: vec![1.0 / total as f64; total], nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `rho2(g) = h . rho1(g) . h^{-1}` for a diffeomorphism `h` of the base.
pub struct ConjugatedAction {
    base: Arc<dyn GroupAction>,
    map: Arc<dyn SmoothMap>,
    max_iter: usize,
}

impl ConjugatedAction {
    pub fn new(base: Arc<dyn GroupAction>, map: Arc<dyn SmoothMap>) -> Result<Self, RigidityError> {
        if map.dim() != base.base_dim() {
            return Err(RigidityError::Mismatch(format!(
                "map has dimension {}, action base {}",
                map.dim(),
                base.base_dim()
            )));
        }
        Ok(ConjugatedAction { base, map, max_iter: 50 })
    }

    pub fn base(&self) -> &Arc<dyn GroupAction> {
        &self.base
    }

    /// Newton solve of `h(u) = q`, differences wrapped on angle coordinates.
    pub fn inverse(&self, q: &[f64]) -> Result<Vec<f64>, LiftError> {
        let periodic = self.base.periodic();
        let scale = 1.0 + q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let residual = |u: &[f64]| -> Result<DVector<f64>, LiftError> {
            let hu = self.map.value(u)?;
            Ok(DVector::from_iterator(
                q.len(),
                hu.iter().zip(q).zip(periodic).map(|((a, b), &p)| if p { wrap_angle(a - b) } else { a - b }),
            ))
        };
        let mut u = q.to_vec();
        let mut r = residual(&u)?;
        for _ in 0..self.max_iter {
            if r.amax() <= 4.0 * f64::EPSILON * scale {
                return Ok(u);
            }
            let step = self
                .map
                .jacobian(&u)?
                .lu()
                .solve(&r)
                .ok_or_else(|| LiftError::NewtonFailed { point: q.to_vec(), residual: r.amax() })?;
            for (ui, si) in u.iter_mut().zip(step.iter()) {
                *ui -= si;
            }
            let next = residual(&u)?;
            // stalled at roundoff level
            if next.amax() >= r.amax() && next.amax() <= 1e-12 * scale {
                return Ok(u);
            }
            r = next;
        }
        if r.amax() <= 1e-12 * scale {
            return Ok(u);
        }
        Err(LiftError::NewtonFailed { point: q.to_vec(), residual: r.amax() })
    }

    fn map_jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        Ok(self.map.jacobian(u)?)
    }
}

impl std::fmt::Debug for ConjugatedAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConjugatedAction")
            .field("group", self.base.group())
            .field("map", &self.map.exprs())
            .finish_non_exhaustive()
    }
}

impl GroupAction for ConjugatedAction {
    fn group(&self) -> &GroupKind {
        self.base.group()
    }

    fn periodic(&self) -> &[bool] {
        self.base.periodic()
    }

    fn apply(&self, g: &[f64], q: &[f64]) -> Result<Vec<f64>, LiftError> {
        let u = self.inverse(q)?;
        Ok(self.map.value(&self.base.apply(g, &u)?)?)
    }

    fn jacobian(&self, g: &[f64], q: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        let u = self.inverse(q)?;
        let moved = self.base.apply(g, &u)?;
        let inner = self
            .map_jacobian(&u)?
            .try_inverse()
            .ok_or_else(|| LiftError::NonInvertibleJacobian { params: g.to_vec(), point: q.to_vec() })?;
        Ok(self.map_jacobian(&moved)? * self.base.jacobian(g, &u)? * inner)
    }

    fn generator(&self, q: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        let u = self.inverse(q)?;
        Ok(self.map_jacobian(&u)? * self.base.generator(&u)?)
    }

    fn orbit(&self, gs: &[Vec<f64>], q: &[f64]) -> Result<Vec<Vec<f64>>, LiftError> {
        let u = self.inverse(q)?;
        gs.iter()
            .map(|g| Ok(self.map.value(&self.base.apply(g, &u)?)?))
            .collect()
    }
}

/// The averaged map, in closed form when the inputs allow it.
#[derive(Debug, Clone)]
pub enum ConjugacyMap {
    Closed(ClosedMap),
    Grid(GridMap),
}

impl ConjugacyMap {
    pub fn kind(&self) -> &'static str {
        match self {
            ConjugacyMap::Closed(_) => "closed_form",
            ConjugacyMap::Grid(_) => "grid",
        }
    }
}

impl SmoothMap for ConjugacyMap {
    fn dim(&self) -> usize {
        match self {
            ConjugacyMap::Closed(m) => m.dim(),
            ConjugacyMap::Grid(m) => m.dim(),
        }
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        match self {
            ConjugacyMap::Closed(m) => m.value(x),
            ConjugacyMap::Grid(m) => m.value(x),
        }
    }

    fn jet(&self, x: &[f64]) -> Result<Jet, MapError> {
        match self {
            ConjugacyMap::Closed(m) => m.jet(x),
            ConjugacyMap::Grid(m) => m.jet(x),
        }
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, MapError> {
        match self {
            ConjugacyMap::Closed(m) => m.jacobian(x),
            ConjugacyMap::Grid(m) => m.jacobian(x),
        }
    }

    fn exprs(&self) -> Option<&[Expr]> {
        match self {
            ConjugacyMap::Closed(m) => m.exprs(),
            ConjugacyMap::Grid(_) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AverageConfig {
    /// Largest allowed displacement of `rho1(g)^-1 rho2(g) x` from `x`.
    pub closeness: f64,
    pub det_threshold: f64,
    /// Grid points per bounded axis. Angle axes use one point per node.
    pub box_points: usize,
    pub interpolation: Interpolation,
    /// Size cap (expression nodes) for the closed-form average.
    pub max_symbolic_nodes: usize,
    pub force_grid: bool,
    /// Points at which node equivariance is measured.
    pub equivariance_points: usize,
    pub seed: u64,
}

impl Default for AverageConfig {
    fn default() -> Self {
        AverageConfig {
            closeness: 0.2,
            det_threshold: 1e-8,
            box_points: 64,
            interpolation: Interpolation::CatmullRom,
            max_symbolic_nodes: 4096,
            force_grid: false,
            equivariance_points: 1,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugationResult {
    pub formula: &'static str,
    pub representation: &'static str,
    #[serde(skip)]
    pub map: ConjugacyMap,
    /// Components of a closed-form map, as text.
    pub closed_form: Option<Vec<String>>,
    pub base_names: Vec<String>,
    pub periodic: Vec<bool>,
    pub quadrature: GroupQuadrature,
    pub grid: Option<Vec<Axis>>,
    pub interpolation: Option<Interpolation>,
    pub max_displacement: f64,
    pub closeness_bound: f64,
    /// `sup |rho1(h) phi(x) - phi(rho2(h) x)|` over nodes `h`, on the
    /// exact (not interpolated) average.
    pub node_equivariance: f64,
    pub min_det: f64,
    pub det_threshold: f64,
    pub suite: Option<EquivalenceReport>,
}

/// Base coordinate names of an action, or `q` / `q1..qm` when it has none.
pub fn base_names(action: &dyn GroupAction) -> Vec<String> {
    if let Some(spec) = action.symbolic() {
        return spec.base().to_vec();
    }
    match action.base_dim() {
        1 => vec!["q".to_string()],
        m => (1..=m).map(|i| format!("q{i}")).collect(),
    }
}

/// Uniform points of the domain: angles in `[-pi, pi)`, other coordinates
/// within their bounds.
pub fn sample_domain(rng: &mut impl Rng, bounds: &[(f64, f64)], periodic: &[bool], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            bounds
                .iter()
                .zip(periodic)
                .map(|(&(lo, hi), &p)| if p { rng.random_range(-PI..PI) } else { rng.random_range(lo..=hi) })
                .collect()
        })
        .collect()
}

fn check_pair(rho1: &dyn GroupAction, rho2: &dyn GroupAction, domain: &[(f64, f64)]) -> Result<(), RigidityError> {
    if rho1.group() != rho2.group() {
        return Err(RigidityError::Mismatch(format!("groups {:?} and {:?}", rho1.group(), rho2.group())));
    }
    if rho1.periodic() != rho2.periodic() {
        return Err(RigidityError::Mismatch("base coordinates differ".into()));
    }
    if domain.len() != rho1.base_dim() {
        return Err(RigidityError::Mismatch(format!(
            "domain has {} bounds for a base of dimension {}",
            domain.len(),
            rho1.base_dim()
        )));
    }
    Ok(())
}

fn negate(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| -v).collect()
}

/// Exact average at one point, and the largest displacement in its cloud.
fn raw_average(
    rho1: &dyn GroupAction,
    rho2: &dyn GroupAction,
    quad: &GroupQuadrature,
    x: &[f64],
) -> Result<(Vec<f64>, f64), RigidityError> {
    let periodic = rho1.periodic();
    let images = rho2.orbit(&quad.nodes, x)?;
    let mut sum = vec![0.0; x.len()];
    let mut worst = 0.0f64;
    for ((g, w), y) in quad.nodes.iter().zip(&quad.weights).zip(&images) {
        let back = rho1.apply(&negate(g), y)?;
        for i in 0..x.len() {
            let mut d = back[i] - x[i];
            if periodic[i] {
                d = wrap_angle(d);
                if d.abs() >= PI / 2.0 {
                    return Err(RigidityError::CloudTooSpread { point: x.to_vec(), spread: d.abs() });
                }
            }
            worst = worst.max(d.abs());
            sum[i] += w * d;
        }
    }
    Ok((x.iter().zip(sum).map(|(a, d)| a + d).collect(), worst))
}

/// Closed-form average of two symbolic actions, if small enough.
fn closed_average(s1: &ActionSpec, s2: &ActionSpec, quad: &GroupQuadrature, cap: usize) -> Option<ClosedMap> {
    let names = s2.base().to_vec();
    if s1.components() == s2.components() && s1.base() == s2.base() && s1.params() == s2.params() {
        return Some(ClosedMap::identity(names));
    }
    let m = names.len();
    let mut terms: Vec<Vec<Expr>> = vec![Vec::with_capacity(quad.len()); m];
    let mut size = 0;
    for (g, w) in quad.nodes.iter().zip(&quad.weights) {
        let inner = s2.at(g);
        let subst = s1.base().iter().cloned().zip(inner).collect();
        for (j, c) in s1.at(&negate(g)).iter().enumerate() {
            let t = c.substitute(&subst) * *w;
            size += t.node_count();
            if size > cap {
                return None;
            }
            terms[j].push(t);
        }
    }
    let exprs = terms.iter().map(Expr::sum).collect();
    ClosedMap::new(names, exprs).ok()
}

/// Bounding box of the domain and of orbit samples, per bounded axis.
fn grid_bounds(
    rho2: &dyn GroupAction,
    quad: &GroupQuadrature,
    domain: &[(f64, f64)],
    probes: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>, RigidityError> {
    let mut bounds = domain.to_vec();
    let stride = (quad.len() / 64).max(1);
    let nodes: Vec<Vec<f64>> = quad.nodes.iter().step_by(stride).cloned().collect();
    for x in probes {
        for y in rho2.orbit(&nodes, x)? {
            for (b, v) in bounds.iter_mut().zip(&y) {
                b.0 = b.0.min(*v);
                b.1 = b.1.max(*v);
            }
        }
    }
    Ok(bounds)
}

/// Corners of a box plus random interior points.
fn probe_points(domain: &[(f64, f64)], periodic: &[bool], seed: u64) -> Vec<Vec<f64>> {
    let m = domain.len();
    let mut pts: Vec<Vec<f64>> = (0..1usize << m.min(10))
        .map(|mask| {
            (0..m)
                .map(|i| if mask >> i & 1 == 1 { domain[i].1 } else { domain[i].0 })
                .collect()
        })
        .collect();
    pts.extend(sample_domain(&mut seeded(seed), domain, periodic, 32));
    pts
}

/// Average `rho1(g)^-1 . rho2(g)` over the quadrature nodes.
///
/// `domain` gives bounds per base coordinate; bounds of angle coordinates
/// are ignored.
pub fn palais_average(
    rho1: &dyn GroupAction,
    rho2: &dyn GroupAction,
    quad: &GroupQuadrature,
    domain: &[(f64, f64)],
    cfg: &AverageConfig,
) -> Result<ConjugationResult, RigidityError> {
    check_pair(rho1, rho2, domain)?;
    if rho1.group() != &quad.kind {
        return Err(RigidityError::Mismatch("quadrature is for another group".into()));
    }
    let periodic = rho1.periodic().to_vec();
    let names = base_names(rho2);
    let probes = probe_points(domain, &periodic, cfg.seed);

    // The closeness gate and the spread check run on the probes first, so
    // a far-apart pair fails before any grid work.
    let mut max_displacement = 0.0f64;
    for x in &probes {
        let (_, d) = raw_average(rho1, rho2, quad, x)?;
        if d > cfg.closeness {
            return Err(RigidityError::NotClose { point: x.clone(), displacement: d, bound: cfg.closeness });
        }
        max_displacement = max_displacement.max(d);
    }

    let closed = match (cfg.force_grid, rho1.symbolic(), rho2.symbolic()) {
        (false, Some(s1), Some(s2)) => closed_average(s1, s2, quad, cfg.max_symbolic_nodes).filter(|c| {
            // reject when wrapping made the exact average branch off
            probes.iter().all(|x| match (c.value(x), raw_average(rho1, rho2, quad, x)) {
                (Ok(a), Ok((b, _))) => a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-9 * (1.0 + v.abs())),
                _ => false,
            })
        }),
        _ => None,
    };

    let (map, grid_axes, det_points) = match closed {
        Some(c) => (ConjugacyMap::Closed(c), None, probes.clone()),
        None => {
            let bounds = grid_bounds(rho2, quad, domain, &probes)?;
            let axes: Vec<Axis> = bounds
                .iter()
                .zip(&periodic)
                .map(|(&(lo, hi), &p)| if p { Axis::periodic(quad.per_axis) } else { Axis::bounded(lo, hi, cfg.box_points) })
                .collect();
            let nodes = GridMap::nodes(&axes);
            let averaged: Vec<Result<(Vec<f64>, f64), RigidityError>> =
                nodes.par_iter().map(|x| raw_average(rho1, rho2, quad, x)).collect();
            let mut data = Vec::with_capacity(nodes.len() * periodic.len());
            for (x, r) in nodes.iter().zip(averaged) {
                // nodes outside the domain only feed the interpolation
                let (phi, _) = r?;
                data.extend(phi.iter().zip(x).map(|(a, b)| a - b));
            }
            let grid = GridMap::new(axes.clone(), cfg.interpolation, data);
            (ConjugacyMap::Grid(grid), Some(axes), nodes)
        }
    };

    let mut min_det = f64::INFINITY;
    for x in &det_points {
        min_det = min_det.min(map.jacobian(x)?.determinant().abs());
    }
    if min_det < cfg.det_threshold {
        return Err(RigidityError::NonInvertible { min_det, threshold: cfg.det_threshold });
    }

    let mut node_equivariance = 0.0f64;
    let eq_points = sample_domain(&mut seeded(cfg.seed ^ 0x5eed), domain, &periodic, cfg.equivariance_points);
    for x in &eq_points {
        let (phi_x, _) = raw_average(rho1, rho2, quad, x)?;
        let moved = rho2.orbit(&quad.nodes, x)?;
        let errs: Vec<Result<f64, RigidityError>> = quad
            .nodes
            .par_iter()
            .zip(moved.par_iter())
            .map(|(h, y)| {
                let lhs = rho1.apply(h, &phi_x)?;
                let (rhs, _) = raw_average(rho1, rho2, quad, y)?;
                Ok(wrapped_distance(&lhs, &rhs, &periodic))
            })
            .collect();
        for e in errs {
            node_equivariance = node_equivariance.max(e?);
        }
    }

    Ok(ConjugationResult {
        formula: AVERAGE_FORMULA,
        representation: map.kind(),
        closed_form: map.exprs().map(|es| es.iter().map(|e| e.to_string()).collect()),
        interpolation: grid_axes.as_ref().map(|_| cfg.interpolation),
        grid: grid_axes,
        map,
        base_names: names,
        periodic,
        quadrature: quad.clone(),
        max_displacement,
        closeness_bound: cfg.closeness,
        node_equivariance,
        min_det,
        det_threshold: cfg.det_threshold,
        suite: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteConfig {
    pub samples: usize,
    pub seed: u64,
    pub tol_conj: f64,
    pub tol_sympl: f64,
    pub tol_moment: f64,
    /// Momenta are drawn from `[-momentum_bound, momentum_bound]`.
    pub momentum_bound: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { samples: 1000, seed: 5, tol_conj: 1e-6, tol_sympl: 1e-8, tol_moment: 1e-6, momentum_bound: 2.0 }
    }
}

/// Sampled distances between the two actions. Both are metadata; no
/// hypothesis is enforced.
#[derive(Debug, Clone, Serialize)]
pub struct Closeness {
    /// `sup |rho1(g) x - rho2(g) x|`
    pub c0: f64,
    /// `sup |d rho1(g) - d rho2(g)|`
    pub c1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub samples: usize,
    pub seed: u64,
    pub residual_conj: f64,
    pub residual_conj_lifted: f64,
    pub residual_sympl: f64,
    pub residual_moment: f64,
    pub lift_constant: f64,
    pub lift_constant_formula: &'static str,
    pub closeness: Closeness,
    pub min_det: f64,
    pub failed_samples: usize,
    pub tol_conj: f64,
    pub tol_sympl: f64,
    pub tol_moment: f64,
    pub pass_conj: bool,
    pub pass_conj_lifted: bool,
    pub pass_sympl: bool,
    pub pass_moment: bool,
    pub pass: bool,
}

const LIFT_CONSTANT_FORMULA: &str =
    "(1 + sup|p|) * sup|D phi_hat|_inf * sup max(|D rho1|_inf, |D rho1^-T|_inf)";

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

struct SampleOutcome {
    conj: f64,
    conj_lifted: f64,
    sympl: f64,
    moment: f64,
    c0: f64,
    c1: f64,
    det: f64,
    p_sup: f64,
    lift_norm: f64,
    action_norm: f64,
}

/// Check `rho1(g) . phi = phi . rho2(g)`, the same for the lifts, the
/// symplecticity of the lift and `mu2 = mu1 . phi_hat` at random `(g, x, p)`.
pub fn verify_equivalence_suite(
    rho1: &dyn GroupAction,
    rho2: &dyn GroupAction,
    phi: &dyn SmoothMap,
    domain: &[(f64, f64)],
    cfg: &SuiteConfig,
) -> Result<EquivalenceReport, RigidityError> {
    check_pair(rho1, rho2, domain)?;
    let periodic = rho1.periodic().to_vec();
    let m = periodic.len();
    if phi.dim() != m {
        return Err(RigidityError::Mismatch(format!("map has dimension {}, base {m}", phi.dim())));
    }
    let lifted = lift_conjugation(phi, &base_names(rho2), &periodic)?;
    let omega = lifted.chart().omega();
    let mut rng = seeded(cfg.seed);
    let gs = rho1.group().sample(&mut rng, cfg.samples);
    let xs = sample_domain(&mut rng, domain, &periodic, cfg.samples);
    let ps: Vec<Vec<f64>> = (0..cfg.samples)
        .map(|_| (0..m).map(|_| rng.random_range(-cfg.momentum_bound..=cfg.momentum_bound)).collect())
        .collect();
    let mut lifted_periodic = periodic.clone();
    lifted_periodic.extend(vec![false; m]);

    let one = |g: &[f64], x: &[f64], p: &[f64]| -> Result<SampleOutcome, RigidityError> {
        let phi_x = phi.value(x)?;
        let lhs = rho1.apply(g, &phi_x)?;
        let y = rho2.apply(g, x)?;
        let rhs = phi.value(&y)?;
        let conj = wrapped_distance(&lhs, &rhs, &periodic);
        let c0 = wrapped_distance(&rho1.apply(g, x)?, &y, &periodic);
        let j1 = rho1.jacobian(g, x)?;
        let c1 = (&j1 - rho2.jacobian(g, x)?).amax();

        let z: Vec<f64> = x.iter().chain(p).copied().collect();
        let phz = lifted.apply(&z)?;
        let lhs = lift_apply(rho1, g, &phz)?;
        let rhs = lifted.apply(&lift_apply(rho2, g, &z)?)?;
        let conj_lifted = wrapped_distance(&lhs, &rhs, &lifted_periodic);
        let jl = lifted.jacobian(&z)?;
        let sympl = symplecticity_residual(&jl, &omega);
        let mu2 = lift_moment(rho2, &z)?;
        let mu1 = lift_moment(rho1, &phz)?;
        let moment = mu2.iter().zip(&mu1).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        let jit = j1
            .transpose()
            .try_inverse()
            .map(|m| inf_norm(&m))
            .unwrap_or(f64::INFINITY);
        Ok(SampleOutcome {
            conj,
            conj_lifted,
            sympl,
            moment,
            c0,
            c1,
            det: phi.jacobian(x)?.determinant().abs(),
            p_sup: p.iter().chain(&phz[m..]).fold(0.0f64, |a, v| a.max(v.abs())),
            lift_norm: inf_norm(&jl),
            action_norm: inf_norm(&j1).max(jit),
        })
    };

    let outcomes: Vec<Result<SampleOutcome, RigidityError>> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| one(&gs[s], &xs[s], &ps[s]))
        .collect();
    let mut acc = SampleOutcome {
        conj: 0.0,
        conj_lifted: 0.0,
        sympl: 0.0,
        moment: 0.0,
        c0: 0.0,
        c1: 0.0,
        det: f64::INFINITY,
        p_sup: 0.0,
        lift_norm: 0.0,
        action_norm: 0.0,
    };
    let mut failed = 0;
    for o in outcomes {
        let Ok(o) = o else {
            failed += 1;
            continue;
        };
        acc.conj = acc.conj.max(o.conj);
        acc.conj_lifted = acc.conj_lifted.max(o.conj_lifted);
        acc.sympl = acc.sympl.max(o.sympl);
        acc.moment = acc.moment.max(o.moment);
        acc.c0 = acc.c0.max(o.c0);
        acc.c1 = acc.c1.max(o.c1);
        acc.det = acc.det.min(o.det);
        acc.p_sup = acc.p_sup.max(o.p_sup);
        acc.lift_norm = acc.lift_norm.max(o.lift_norm);
        acc.action_norm = acc.action_norm.max(o.action_norm);
    }
    let lift_constant = (1.0 + acc.p_sup) * acc.lift_norm * acc.action_norm;
    let ok = failed == 0;
    let pass_conj = ok && acc.conj <= cfg.tol_conj;
    let pass_conj_lifted = ok && acc.conj_lifted <= lift_constant * cfg.tol_conj;
    let pass_sympl = ok && acc.sympl <= cfg.tol_sympl;
    let pass_moment = ok && acc.moment <= cfg.tol_moment;
    Ok(EquivalenceReport {
        samples: cfg.samples,
        seed: cfg.seed,
        residual_conj: acc.conj,
        residual_conj_lifted: acc.conj_lifted,
        residual_sympl: acc.sympl,
        residual_moment: acc.moment,
        lift_constant,
        lift_constant_formula: LIFT_CONSTANT_FORMULA,
        closeness: Closeness { c0: acc.c0, c1: acc.c1 },
        min_det: acc.det,
        failed_samples: failed,
        tol_conj: cfg.tol_conj,
        tol_sympl: cfg.tol_sympl,
        tol_moment: cfg.tol_moment,
        pass_conj,
        pass_conj_lifted,
        pass_sympl,
        pass_moment,
        pass: pass_conj && pass_conj_lifted && pass_sympl && pass_moment,
    })
}

/// Average, then run the suite on the result.
pub fn conjugate(
    rho1: &dyn GroupAction,
    rho2: &dyn GroupAction,
    quad: &GroupQuadrature,
    domain: &[(f64, f64)],
    avg: &AverageConfig,
    suite: &SuiteConfig,
) -> Result<ConjugationResult, RigidityError> {
    let mut result = palais_average(rho1, rho2, quad, domain, avg)?;
    result.suite = Some(verify_equivalence_suite(rho1, rho2, &result.map, domain, suite)?);
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergencePoint {
    pub nodes: usize,
    pub residual_conj: f64,
    pub residual_moment: f64,
    pub node_equivariance: f64,
}

/// `conjugate` for each node count in `per_axis`.
pub fn convergence_study(
    rho1: &dyn GroupAction,
    rho2: &dyn GroupAction,
    per_axis: &[usize],
    domain: &[(f64, f64)],
    avg: &AverageConfig,
    suite: &SuiteConfig,
) -> Result<Vec<ConvergencePoint>, RigidityError> {
    per_axis
        .iter()
        .map(|&n| {
            let quad = GroupQuadrature::uniform(rho1.group(), n)?;
            let r = conjugate(rho1, rho2, &quad, domain, avg, suite)?;
            let s = r.suite.as_ref().expect("suite was run");
            Ok(ConvergencePoint {
                nodes: n,
                residual_conj: s.residual_conj,
                residual_moment: s.residual_moment,
                node_equivariance: r.node_equivariance,
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn circle_rotations() -> ActionSpec {
        ActionSpec::new(GroupKind::Circle, names(&["t"]), names(&["q"]), vec![true], vec![e("q + t")]).unwrap()
    }

    pub(crate) fn plane_rotations() -> ActionSpec {
        ActionSpec::new(
            GroupKind::Circle,
            names(&["t"]),
            names(&["x1", "x2"]),
            vec![false, false],
            vec![e("cos(t)*x1 - sin(t)*x2"), e("sin(t)*x1 + cos(t)*x2")],
        )
        .unwrap()
    }

    pub(crate) fn wobble() -> ClosedMap {
        ClosedMap::new(names(&["q"]), vec![e("q + 0.05*sin(q)")]).unwrap()
    }

    fn circle_domain() -> Vec<(f64, f64)> {
        vec![(-PI, PI)]
    }

    #[test]
    fn quadrature_nodes_form_a_subgroup() {
        let q = GroupQuadrature::uniform(&GroupKind::Torus(2), 8).unwrap();
        assert_eq!(q.len(), 64);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(
            GroupQuadrature::uniform(&GroupKind::RealLine(1), 8),
            Err(RigidityError::NonCompactGroup(_))
        ));
    }

    #[test]
    fn conjugated_action_is_an_action_with_consistent_derivatives() {
        let rho1: Arc<dyn GroupAction> = Arc::new(circle_rotations());
        let rho2 = ConjugatedAction::new(rho1.clone(), Arc::new(wobble())).unwrap();
        let h = wobble();
        for q in [-2.0, 0.3, 3.0] {
            let u = rho2.inverse(&[q]).unwrap();
            assert!((h.value(&u).unwrap()[0] - q).abs() < 1e-14);
            let g = [0.7];
            let want = h.value(&[u[0] + 0.7]).unwrap();
            assert!((rho2.apply(&g, &[q]).unwrap()[0] - want[0]).abs() < 1e-14);
            let eps = 1e-6;
            let fd = (rho2.apply(&g, &[q + eps]).unwrap()[0] - rho2.apply(&g, &[q - eps]).unwrap()[0]) / (2.0 * eps);
            assert!((rho2.jacobian(&g, &[q]).unwrap()[(0, 0)] - fd).abs() < 1e-8);
            let fd = (rho2.apply(&[eps], &[q]).unwrap()[0] - rho2.apply(&[-eps], &[q]).unwrap()[0]) / (2.0 * eps);
            assert!((rho2.generator(&[q]).unwrap()[(0, 0)] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_actions_average_to_identity() {
        let rho = circle_rotations();
        let quad = GroupQuadrature::uniform(&GroupKind::Circle, 64).unwrap();
        let r = conjugate(&rho, &rho, &quad, &circle_domain(), &AverageConfig::default(), &SuiteConfig::default())
            .unwrap();
        assert_eq!(r.representation, "closed_form");
        assert_eq!(r.closed_form.as_deref(), Some(&["q".to_string()][..]));
        let s = r.suite.unwrap();
        assert!(s.residual_conj <= 1e-14, "{}", s.residual_conj);
        assert!(s.pass);
    }

    #[test]
    fn wobbled_circle_conjugacy_is_recovered() {
        let rho1: Arc<dyn GroupAction> = Arc::new(circle_rotations());
        let rho2 = ConjugatedAction::new(rho1.clone(), Arc::new(wobble())).unwrap();
        let quad = GroupQuadrature::uniform(&GroupKind::Circle, 512).unwrap();
        let suite = SuiteConfig { samples: 200, ..SuiteConfig::default() };
        let r = conjugate(&*rho1, &rho2, &quad, &circle_domain(), &AverageConfig::default(), &suite).unwrap();
        assert_eq!(r.representation, "grid");
        assert!(r.node_equivariance <= 1e-12, "{}", r.node_equivariance);
        // the oracle: phi is h^-1
        let h = wobble();
        for x in [-3.0, -1.0, 0.4, 2.5] {
            let back = h.value(&r.map.value(&[x]).unwrap()).unwrap()[0];
            assert!(wrap_angle(back - x).abs() < 1e-7);
        }
        let s = r.suite.unwrap();
        assert!(s.residual_conj < 1e-7, "{}", s.residual_conj);
        assert!(s.residual_sympl < 1e-12);
        assert!(s.closeness.c0 > 0.01);
    }

    #[test]
    fn linear_conjugacy_of_plane_rotations() {
        let rho1: Arc<dyn GroupAction> = Arc::new(plane_rotations());
        let a = ClosedMap::new(names(&["x1", "x2"]), vec![e("x1 + 0.05*x2"), e("0.05*x1 + x2")]).unwrap();
        let rho2 = ConjugatedAction::new(rho1.clone(), Arc::new(a)).unwrap();
        let quad = GroupQuadrature::uniform(&GroupKind::Circle, 16).unwrap();
        let domain = vec![(-1.0, 1.0), (-1.0, 1.0)];
        let avg = AverageConfig { box_points: 24, ..AverageConfig::default() };
        let suite = SuiteConfig { samples: 300, ..SuiteConfig::default() };
        let r = conjugate(&*rho1, &rho2, &quad, &domain, &avg, &suite).unwrap();
        let s = r.suite.unwrap();
        assert!(s.residual_conj <= 1e-8, "{}", s.residual_conj);
        assert!(s.residual_moment <= 1e-8, "{}", s.residual_moment);
        assert!(s.pass);
    }

    #[test]
    fn identity_is_not_a_conjugacy_of_different_actions() {
        let rho1 = plane_rotations();
        let rho2 = ActionSpec::new(
            GroupKind::Circle,
            names(&["t"]),
            names(&["x1", "x2"]),
            vec![false, false],
            vec![e("cos(t)*x1 - sin(t)*x2 + 0.01*sin(t)"), e("sin(t)*x1 + cos(t)*x2 + 0.01*(1 - cos(t))")],
        )
        .unwrap();
        let id = ClosedMap::identity(names(&["x1", "x2"]));
        let domain = vec![(-1.0, 1.0), (-1.0, 1.0)];
        let s = verify_equivalence_suite(&rho1, &rho2, &id, &domain, &SuiteConfig::default()).unwrap();
        assert_eq!(s.residual_conj, s.closeness.c0);
        assert!(s.residual_conj > 1e-3);
        assert!(!s.pass);
    }

    #[test]
    fn translations_are_conjugated_by_any_translation() {
        let rho = circle_rotations();
        let shift = ClosedMap::new(names(&["q"]), vec![e("q + 0.37")]).unwrap();
        let s = verify_equivalence_suite(&rho, &rho, &shift, &circle_domain(), &SuiteConfig::default()).unwrap();
        assert!(s.residual_conj <= 1e-12 && s.residual_sympl <= 1e-12 && s.residual_moment <= 1e-12);
        assert!(s.pass);
    }

    #[test]
    fn closed_form_average_of_shifted_rotations() {
        // rho2 is rho1 conjugated by a translation of the plane
        let rho1 = plane_rotations();
        let rho2 = ActionSpec::new(
            GroupKind::Circle,
            names(&["t"]),
            names(&["x1", "x2"]),
            vec![false, false],
            vec![
                e("cos(t)*(x1 - 0.05) - sin(t)*x2 + 0.05"),
                e("sin(t)*(x1 - 0.05) + cos(t)*x2"),
            ],
        )
        .unwrap();
        let quad = GroupQuadrature::uniform(&GroupKind::Circle, 8).unwrap();
        let domain = vec![(-1.0, 1.0), (-1.0, 1.0)];
        let r = conjugate(&rho1, &rho2, &quad, &domain, &AverageConfig::default(), &SuiteConfig::default()).unwrap();
        assert_eq!(r.representation, "closed_form");
        let s = r.suite.unwrap();
        assert!(s.residual_conj <= 1e-10 && s.residual_moment <= 1e-10 && s.residual_sympl <= 1e-10);
        let v = r.map.value(&[0.3, 0.2]).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn far_apart_actions_are_refused() {
        let rho1 = circle_rotations();
        let rho2 =
            ActionSpec::new(GroupKind::Circle, names(&["t"]), names(&["q"]), vec![true], vec![e("q + 2*t")]).unwrap();
        let quad = GroupQuadrature::uniform(&GroupKind::Circle, 16).unwrap();
        let err = palais_average(&rho1, &rho2, &quad, &circle_domain(), &AverageConfig::default()).unwrap_err();
        assert!(matches!(err, RigidityError::CloudTooSpread { .. }), "{err}");
        let loose = AverageConfig { closeness: 10.0, ..AverageConfig::default() };
        let err = palais_average(&rho1, &rho2, &quad, &circle_domain(), &loose).unwrap_err();
        assert!(matches!(err, RigidityError::CloudTooSpread { .. }));

        let plane = plane_rotations();
        let shifted = ActionSpec::new(
            GroupKind::Circle,
            names(&["t"]),
            names(&["x1", "x2"]),
            vec![false, false],
            vec![e("cos(t)*(x1 - 0.5) - sin(t)*x2 + 0.5"), e("sin(t)*(x1 - 0.5) + cos(t)*x2")],
        )
        .unwrap();
        let domain = vec![(-1.0, 1.0), (-1.0, 1.0)];
        let err = palais_average(&plane, &shifted, &quad, &domain, &AverageConfig::default()).unwrap_err();
        assert!(matches!(err, RigidityError::NotClose { .. }), "{err}");
    }
}
