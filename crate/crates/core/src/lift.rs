//! Abelian group actions on base charts and their cotangent lifts.
//!
//! Group parameters are additive coordinates: angles for circle factors,
//! reals for line factors, so `g * h` is `g + h` and the identity is `0`.
//! Fundamental fields follow `X# = d/dt rho(exp(-tX))|_{t=0}`, and the moment
//! map of a lift is `mu_X = lambda(X#)`.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, Expr, ExprError, Program};
use crate::smooth_map::MapError;
use crate::symplectic::{
    hamiltonian_closure_residual, pullback_residual, symplecticity_residual, DarbouxChart, Orientation, ResidualReport,
    SymplecticError, VectorFieldExpr,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
    #[error("group has {expected} parameters, got {got}")]
    WrongParamCount { expected: usize, got: usize },
    #[error("expected {expected} components, got {got}")]
    WrongComponentCount { expected: usize, got: usize },
    #[error("`{0}` is neither a base coordinate nor a group parameter")]
    ForeignVariable(String),
    #[error("name `{0}` is used twice")]
    DuplicateName(String),
    #[error("base Jacobian is not invertible at parameters {params:?}, point {point:?}")]
    NonInvertibleJacobian { params: Vec<f64>, point: Vec<f64> },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("Newton inversion did not converge at {point:?} (residual {residual:.3e})")]
    NewtonFailed { point: Vec<f64>, residual: f64 },
}

/// Connected abelian groups in scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Circle,
    Torus(usize),
    RealLine(usize),
    Product(Vec<GroupKind>),
}

impl GroupKind {
    pub fn dim(&self) -> usize {
        match self {
            GroupKind::Circle => 1,
            GroupKind::Torus(d) | GroupKind::RealLine(d) => *d,
            GroupKind::Product(parts) => parts.iter().map(GroupKind::dim).sum(),
        }
    }

    /// Which parameters are angles.
    pub fn periodic_params(&self) -> Vec<bool> {
        match self {
            GroupKind::Circle => vec![true],
            GroupKind::Torus(d) => vec![true; *d],
            GroupKind::RealLine(d) => vec![false; *d],
            GroupKind::Product(parts) => parts.iter().flat_map(GroupKind::periodic_params).collect(),
        }
    }

    pub fn is_compact(&self) -> bool {
        self.periodic_params().iter().all(|p| *p)
    }

    /// Uniform samples: angles in `[-pi, pi)`, line parameters in `[-1, 1)`.
    pub fn sample(&self, rng: &mut impl Rng, count: usize) -> Vec<Vec<f64>> {
        let flags = self.periodic_params();
        (0..count)
            .map(|_| {
                flags
                    .iter()
                    .map(|&p| if p { rng.random_range(-PI..PI) } else { rng.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect()
    }
}

/// Wrap an angle difference into `(-pi, pi]`.
pub fn wrap_angle(d: f64) -> f64 {
    let r = d.rem_euclid(2.0 * PI);
    if r > PI { r - 2.0 * PI } else { r }
}

/// `max_i |a_i - b_i|` with differences on periodic coordinates wrapped.
pub fn wrapped_distance(a: &[f64], b: &[f64], periodic: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let d = x - y;
            if periodic.get(i).copied().unwrap_or(false) { wrap_angle(d).abs() } else { d.abs() }
        })
        .fold(0.0, f64::max)
}

/// Numeric interface shared by symbolic actions and derived ones
/// (conjugated actions whose formulas are not closed-form).
pub trait GroupAction: Send + Sync {
    fn group(&self) -> &GroupKind;
    /// Periodic flags of the base coordinates.
    fn periodic(&self) -> &[bool];
    fn base_dim(&self) -> usize {
        self.periodic().len()
    }
    fn apply(&self, g: &[f64], q: &[f64]) -> Result<Vec<f64>, LiftError>;
    /// `d rho_g / dq` at `q`.
    fn jacobian(&self, g: &[f64], q: &[f64]) -> Result<DMatrix<f64>, LiftError>;
    /// `d rho_g(q) / dg` at the identity, one column per parameter.
    fn generator(&self, q: &[f64]) -> Result<DMatrix<f64>, LiftError>;
    /// `rho_g(q)` for many `g` at once.
    fn orbit(&self, gs: &[Vec<f64>], q: &[f64]) -> Result<Vec<Vec<f64>>, LiftError> {
        gs.iter().map(|g| self.apply(g, q)).collect()
    }
    /// The defining expressions, when the action has them.
    fn symbolic(&self) -> Option<&ActionSpec> {
        None
    }
}

/// Lift of any action: `(q, p) -> (rho_g(q), (d rho_g)^{-T} p)`.
pub fn lift_apply(action: &dyn GroupAction, g: &[f64], z: &[f64]) -> Result<Vec<f64>, LiftError> {
    let m = action.base_dim();
    if z.len() != 2 * m {
        return Err(SymplecticError::DimensionMismatch { expected: 2 * m, got: z.len() }.into());
    }
    let (q, p) = z.split_at(m);
    let mut out = action.apply(g, q)?;
    let jit = action
        .jacobian(g, q)?
        .transpose()
        .try_inverse()
        .ok_or_else(|| LiftError::NonInvertibleJacobian { params: g.to_vec(), point: q.to_vec() })?;
    out.extend((jit * DVector::from_column_slice(p)).iter());
    Ok(out)
}

/// Moment map of the lift of any action: `mu_j(q, p) = -p . d rho/d g_j (q)`.
pub fn lift_moment(action: &dyn GroupAction, z: &[f64]) -> Result<Vec<f64>, LiftError> {
    let m = action.base_dim();
    if z.len() != 2 * m {
        return Err(SymplecticError::DimensionMismatch { expected: 2 * m, got: z.len() }.into());
    }
    let (q, p) = z.split_at(m);
    let gen = action.generator(q)?;
    Ok((-(gen.transpose() * DVector::from_column_slice(p))).iter().copied().collect())
}

/// A parameterized action `rho(g, q)` given by expressions.
#[derive(Debug, Clone)]
pub struct ActionSpec {
    group: GroupKind,
    params: Vec<String>,
    base: Vec<String>,
    periodic: Vec<bool>,
    components: Vec<Expr>,
    value: Program,
    jac: Program,
    generator: Program,
}

impl ActionSpec {
    pub fn new(
        group: GroupKind,
        params: Vec<String>,
        base: Vec<String>,
        periodic: Vec<bool>,
        components: Vec<Expr>,
    ) -> Result<Self, LiftError> {
        if params.len() != group.dim() {
            return Err(LiftError::WrongParamCount { expected: group.dim(), got: params.len() });
        }
        let m = base.len();
        if components.len() != m {
            return Err(LiftError::WrongComponentCount { expected: m, got: components.len() });
        }
        if periodic.len() != m {
            return Err(LiftError::WrongComponentCount { expected: m, got: periodic.len() });
        }
        let mut seen = HashSet::new();
        for n in base.iter().chain(&params) {
            if !seen.insert(n.as_str()) {
                return Err(LiftError::DuplicateName(n.clone()));
            }
        }
        for c in &components {
            for v in c.variables() {
                if !seen.contains(v.as_str()) {
                    return Err(LiftError::ForeignVariable(v));
                }
            }
        }
        let vars: Vec<&str> = base.iter().chain(&params).map(String::as_str).collect();
        let base_vars: Vec<&str> = base.iter().map(String::as_str).collect();
        let jac: Vec<Expr> = expr::jacobian(&components, &base_vars).into_iter().flatten().collect();
        let at_identity: Vec<(&str, f64)> = params.iter().map(|p| (p.as_str(), 0.0)).collect();
        let gens: Vec<Expr> = components
            .iter()
            .flat_map(|c| params.iter().map(move |p| c.diff(p)))
            .map(|e| e.fix(&at_identity))
            .collect();
        Ok(ActionSpec {
            value: Program::compile(&components, &vars)?,
            jac: Program::compile(&jac, &vars)?,
            generator: Program::compile(&gens, &base_vars)?,
            group,
            params,
            base,
            periodic,
            components,
        })
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn base(&self) -> &[String] {
        &self.base
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    fn args(&self, g: &[f64], q: &[f64]) -> Result<Vec<f64>, LiftError> {
        if g.len() != self.params.len() {
            return Err(LiftError::WrongParamCount { expected: self.params.len(), got: g.len() });
        }
        if q.len() != self.base.len() {
            return Err(SymplecticError::DimensionMismatch { expected: self.base.len(), got: q.len() }.into());
        }
        Ok(q.iter().chain(g).copied().collect())
    }

    /// Components with the parameters fixed.
    pub fn at(&self, g: &[f64]) -> Vec<Expr> {
        let fixed: Vec<(&str, f64)> = self.params.iter().map(String::as_str).zip(g.iter().copied()).collect();
        self.components.iter().map(|c| c.fix(&fixed)).collect()
    }
}

impl GroupAction for ActionSpec {
    fn group(&self) -> &GroupKind {
        &self.group
    }

    fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    fn apply(&self, g: &[f64], q: &[f64]) -> Result<Vec<f64>, LiftError> {
        Ok(self.value.eval(&self.args(g, q)?)?)
    }

    fn jacobian(&self, g: &[f64], q: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        let m = self.base.len();
        Ok(DMatrix::from_row_slice(m, m, &self.jac.eval(&self.args(g, q)?)?))
    }

    fn generator(&self, q: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        let (m, d) = (self.base.len(), self.params.len());
        Ok(DMatrix::from_row_slice(m, d, &self.generator.eval(q)?))
    }

    fn symbolic(&self) -> Option<&ActionSpec> {
        Some(self)
    }
}

/// Identity and composition checks of the action axioms.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub identity: ResidualReport,
    pub composition: ResidualReport,
    pub pass: bool,
}

pub fn check_action_axioms(
    action: &dyn GroupAction,
    params: &[Vec<f64>],
    points: &[Vec<f64>],
    tol_identity: f64,
    tol_composition: f64,
) -> Result<AxiomReport, LiftError> {
    let periodic = action.periodic();
    let zero = vec![0.0; action.group().dim()];
    let mut id = Vec::with_capacity(points.len());
    for q in points {
        id.push(wrapped_distance(&action.apply(&zero, q)?, q, periodic));
    }
    let mut comp = Vec::new();
    for pair in params.chunks(2) {
        let [g, h] = pair else { continue };
        let gh: Vec<f64> = g.iter().zip(h).map(|(a, b)| a + b).collect();
        for q in points {
            let two = action.apply(g, &action.apply(h, q)?)?;
            let one = action.apply(&gh, q)?;
            comp.push(wrapped_distance(&two, &one, periodic));
        }
    }
    let identity = ResidualReport::from_residuals("action_identity", &id, Vec::new(), tol_identity);
    let composition = ResidualReport::from_residuals("action_composition", &comp, Vec::new(), tol_composition);
    let pass = identity.pass && composition.pass;
    Ok(AxiomReport { identity, composition, pass })
}

/// Momentum name paired with a position name: `q -> p`, `q1 -> p1`,
/// `x1 -> y1`, otherwise `p_<name>`.
pub fn default_momentum_name(position: &str) -> String {
    if let Some(rest) = position.strip_prefix('q') {
        format!("p{rest}")
    } else if let Some(rest) = position.strip_prefix('x') {
        format!("y{rest}")
    } else {
        format!("p_{position}")
    }
}

/// Largest base dimension for which the lift is built in closed form.
pub const SYMBOLIC_LIFT_MAX_DIM: usize = 4;

#[derive(Debug, Clone)]
struct SymbolicLift {
    components: Vec<Expr>,
    value: Program,
    jac: Program,
}

/// Cotangent lift `(q, p) -> (rho_g(q), (d rho_g)^{-T} p)` on `T*M` with the
/// canonical (cotangent) orientation.
#[derive(Debug, Clone)]
pub struct LiftedAction {
    source: ActionSpec,
    chart: DarbouxChart,
    symbolic: Option<SymbolicLift>,
    /// `d/dq_k (d rho / dq)`, row-major in (k, i, j), for the numeric path.
    djac: Option<Program>,
}

fn minor(m: &[Vec<Expr>], row: usize, col: usize) -> Vec<Vec<Expr>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| r.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, e)| e.clone()).collect())
        .collect()
}

fn determinant(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        n => {
            let terms: Vec<Expr> = (0..n)
                .filter(|&j| !m[0][j].is_zero())
                .map(|j| {
                    let t = &m[0][j] * determinant(&minor(m, 0, j));
                    if j % 2 == 0 { t } else { -t }
                })
                .collect();
            Expr::sum(&terms)
        }
    }
}

/// `(J^{-1})^T` as the cofactor matrix over the determinant.
pub(crate) fn inverse_transpose(j: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let n = j.len();
    let det = determinant(j);
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let cof = determinant(&minor(j, r, c));
                    let signed = if (r + c) % 2 == 0 { cof } else { -cof };
                    signed / &det
                })
                .collect()
        })
        .collect()
}

pub fn cotangent_lift(source: &ActionSpec) -> Result<LiftedAction, LiftError> {
    cotangent_lift_with(source, SYMBOLIC_LIFT_MAX_DIM, None)
}

/// Build a lift; closed form when the base dimension is at most
/// `symbolic_max_dim`. `momenta` overrides the default momentum names.
pub fn cotangent_lift_with(
    source: &ActionSpec,
    symbolic_max_dim: usize,
    momenta: Option<Vec<String>>,
) -> Result<LiftedAction, LiftError> {
    let m = source.base.len();
    let momenta = momenta.unwrap_or_else(|| source.base.iter().map(|q| default_momentum_name(q)).collect());
    let chart = DarbouxChart::new(source.base.clone(), momenta)?
        .with_orientation(Orientation::Cotangent)
        .with_periodic(source.periodic.clone())?;
    for n in chart.momenta() {
        if source.params.contains(n) {
            return Err(LiftError::DuplicateName(n.clone()));
        }
    }
    let base_vars: Vec<&str> = source.base.iter().map(String::as_str).collect();
    let jac = expr::jacobian(&source.components, &base_vars);
    let lift = if m <= symbolic_max_dim {
        let inv_t = inverse_transpose(&jac);
        let ps: Vec<Expr> = chart.momenta().iter().map(|p| Expr::var(p)).collect();
        let fibre: Vec<Expr> = inv_t
            .iter()
            .map(|row| Expr::sum(&row.iter().zip(&ps).map(|(a, p)| a * p).collect::<Vec<_>>()))
            .collect();
        let components: Vec<Expr> = source.components.iter().cloned().chain(fibre).collect();
        let vars = lifted_vars(&chart, source);
        let jl: Vec<Expr> = expr::jacobian(&components, &chart.names()).into_iter().flatten().collect();
        LiftedAction {
            symbolic: Some(SymbolicLift {
                value: Program::compile(&components, &vars)?,
                jac: Program::compile(&jl, &vars)?,
                components,
            }),
            djac: None,
            source: source.clone(),
            chart,
        }
    } else {
        let dj: Vec<Expr> = base_vars
            .iter()
            .flat_map(|k| jac.iter().flat_map(move |row| row.iter().map(move |e| e.diff(k))))
            .collect();
        let vars: Vec<&str> = source.base.iter().chain(&source.params).map(String::as_str).collect();
        LiftedAction {
            symbolic: None,
            djac: Some(Program::compile(&dj, &vars)?),
            source: source.clone(),
            chart,
        }
    };
    Ok(lift)
}

fn lifted_vars<'a>(chart: &'a DarbouxChart, source: &'a ActionSpec) -> Vec<&'a str> {
    chart.names().into_iter().chain(source.params.iter().map(String::as_str)).collect()
}

impl LiftedAction {
    /// A lift given directly by 2m expressions in the chart variables and the
    /// group parameters (used to audit hand-written lifts).
    pub fn from_raw(source: &ActionSpec, chart: DarbouxChart, components: Vec<Expr>) -> Result<Self, LiftError> {
        if components.len() != chart.dim() {
            return Err(LiftError::WrongComponentCount { expected: chart.dim(), got: components.len() });
        }
        let vars = lifted_vars(&chart, source);
        let known: HashSet<&str> = vars.iter().copied().collect();
        for c in &components {
            for v in c.variables() {
                if !known.contains(v.as_str()) {
                    return Err(LiftError::ForeignVariable(v));
                }
            }
        }
        let jl: Vec<Expr> = expr::jacobian(&components, &chart.names()).into_iter().flatten().collect();
        Ok(LiftedAction {
            symbolic: Some(SymbolicLift {
                value: Program::compile(&components, &vars)?,
                jac: Program::compile(&jl, &vars)?,
                components,
            }),
            djac: None,
            source: source.clone(),
            chart,
        })
    }

    pub fn source(&self) -> &ActionSpec {
        &self.source
    }

    pub fn chart(&self) -> &DarbouxChart {
        &self.chart
    }

    /// Closed-form components, when available.
    pub fn components(&self) -> Option<&[Expr]> {
        self.symbolic.as_ref().map(|s| s.components.as_slice())
    }

    /// Closed-form map for fixed parameters.
    pub fn map_at(&self, g: &[f64]) -> Option<Vec<Expr>> {
        let fixed: Vec<(&str, f64)> = self.source.params.iter().map(String::as_str).zip(g.iter().copied()).collect();
        self.components().map(|cs| cs.iter().map(|c| c.fix(&fixed)).collect())
    }

    fn split<'z>(&self, z: &'z [f64]) -> Result<(&'z [f64], &'z [f64]), LiftError> {
        self.chart.check_point(z)?;
        Ok(z.split_at(self.chart.dof()))
    }

    fn base_inverse_transpose(&self, g: &[f64], q: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        let j = self.source.jacobian(g, q)?;
        j.transpose().try_inverse().ok_or_else(|| LiftError::NonInvertibleJacobian {
            params: g.to_vec(),
            point: q.to_vec(),
        })
    }

    pub fn apply(&self, g: &[f64], z: &[f64]) -> Result<Vec<f64>, LiftError> {
        let (q, p) = self.split(z)?;
        if let Some(s) = &self.symbolic {
            let args: Vec<f64> = z.iter().chain(g).copied().collect();
            return Ok(s.value.eval(&args)?);
        }
        let mut out = self.source.apply(g, q)?;
        let fibre = self.base_inverse_transpose(g, q)? * DVector::from_column_slice(p);
        out.extend(fibre.iter());
        Ok(out)
    }

    /// Jacobian of `z -> rho_hat_g(z)`.
    pub fn jacobian(&self, g: &[f64], z: &[f64]) -> Result<DMatrix<f64>, LiftError> {
        let (q, p) = self.split(z)?;
        let dim = self.chart.dim();
        if let Some(s) = &self.symbolic {
            let args: Vec<f64> = z.iter().chain(g).copied().collect();
            return Ok(DMatrix::from_row_slice(dim, dim, &s.jac.eval(&args)?));
        }
        let m = self.chart.dof();
        let j = self.source.jacobian(g, q)?;
        let jit = self.base_inverse_transpose(g, q)?;
        let pv = DVector::from_column_slice(p);
        let fibre = &jit * &pv;
        let args: Vec<f64> = q.iter().chain(g).copied().collect();
        let dj = self.djac.as_ref().expect("numeric lift keeps second derivatives").eval(&args)?;
        let mut out = DMatrix::zeros(dim, dim);
        out.view_mut((0, 0), (m, m)).copy_from(&j);
        out.view_mut((m, m), (m, m)).copy_from(&jit);
        for k in 0..m {
            let djk = DMatrix::from_row_slice(m, m, &dj[k * m * m..(k + 1) * m * m]);
            let col = -(&jit * djk.transpose() * &fibre);
            out.view_mut((m, k), (m, 1)).copy_from(&col);
        }
        Ok(out)
    }

    /// `X# = d/dt rho_hat(exp(-tX))|_{t=0}` for the `j`-th parameter
    /// direction. Uses the identity at parameter 0, so the fibre part is
    /// `(d/dtheta_j d rho/dq |_0)^T p`.
    pub fn fundamental_vector_field(&self, j: usize) -> VectorFieldExpr {
        let src = &self.source;
        let theta = &src.params[j];
        let at_identity: Vec<(&str, f64)> = src.params.iter().map(|p| (p.as_str(), 0.0)).collect();
        let base: Vec<Expr> = src.components.iter().map(|c| -c.diff(theta).fix(&at_identity)).collect();
        let ps: Vec<Expr> = self.chart.momenta().iter().map(|p| Expr::var(p)).collect();
        let fibre: Vec<Expr> = src
            .base
            .iter()
            .map(|qi| {
                let terms: Vec<Expr> = src
                    .components
                    .iter()
                    .zip(&ps)
                    .map(|(rho_k, pk)| rho_k.diff(qi).diff(theta).fix(&at_identity) * pk)
                    .collect();
                Expr::sum(&terms)
            })
            .collect();
        VectorFieldExpr { chart: self.chart.clone(), components: base.into_iter().chain(fibre).collect() }
    }

    /// `mu_j = lambda(X#_j) = sum_i p_i (X#_j)^{q_i}`, one per parameter.
    pub fn moment_map(&self) -> Vec<Expr> {
        let m = self.chart.dof();
        (0..self.source.params.len())
            .map(|j| {
                let x = self.fundamental_vector_field(j);
                let terms: Vec<Expr> =
                    self.chart.momenta().iter().zip(&x.components[..m]).map(|(p, c)| Expr::var(p) * c).collect();
                Expr::sum(&terms)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LiftInvarianceReport {
    pub pullback: ResidualReport,
    pub symplecticity: ResidualReport,
    pub pass: bool,
}

/// `rho_hat_g^* lambda = lambda` and `J^T W J = W` at every (g, z) sample.
pub fn verify_lift_invariance(
    lift: &LiftedAction,
    params: &[Vec<f64>],
    points: &[Vec<f64>],
    tol: f64,
) -> Result<LiftInvarianceReport, LiftError> {
    let m = lift.chart.dof();
    let omega = lift.chart.omega();
    let lambda = |z: &[f64]| -> Vec<f64> { z[m..].iter().copied().chain(std::iter::repeat_n(0.0, m)).collect() };
    let mut pull = Vec::with_capacity(params.len() * points.len());
    let mut sym = Vec::with_capacity(params.len() * points.len());
    let mut flagged = Vec::new();
    for g in params {
        for z in points {
            let idx = pull.len();
            match (lift.apply(g, z), lift.jacobian(g, z)) {
                (Ok(image), Ok(j)) => {
                    pull.push(pullback_residual(&lambda(&image), &j, &lambda(z)));
                    sym.push(symplecticity_residual(&j, &omega));
                }
                (Err(LiftError::NonInvertibleJacobian { .. }), _) | (_, Err(LiftError::NonInvertibleJacobian { .. })) => {
                    flagged.push(idx);
                    pull.push(0.0);
                    sym.push(0.0);
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
    }
    let pullback = ResidualReport::from_residuals("lift_lambda_pullback", &pull, flagged.clone(), tol);
    let symplecticity = ResidualReport::from_residuals("lift_symplecticity", &sym, flagged, tol);
    let pass = pullback.pass && symplecticity.pass;
    Ok(LiftInvarianceReport { pullback, symplecticity, pass })
}

/// `iota_{X#} omega = -d mu` for every parameter direction.
pub fn verify_moment_closure(lift: &LiftedAction, points: &[Vec<f64>], tol: f64) -> Result<ResidualReport, LiftError> {
    let mu = lift.moment_map();
    let mut residuals = Vec::new();
    for (j, muj) in mu.iter().enumerate() {
        let x = lift.fundamental_vector_field(j);
        let r = hamiltonian_closure_residual(&x, muj, points, tol)?;
        residuals.push(r.max_residual);
    }
    Ok(ResidualReport::from_residuals("moment_closure", &residuals, Vec::new(), tol))
}

/// `mu o rho_hat_g = mu` (abelian groups).
pub fn verify_moment_invariance(
    lift: &LiftedAction,
    params: &[Vec<f64>],
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ResidualReport, LiftError> {
    let mu = Program::compile(&lift.moment_map(), &lift.chart.names())?;
    let mut residuals = Vec::new();
    for g in params {
        for z in points {
            let a = mu.eval(&lift.apply(g, z)?)?;
            let b = mu.eval(z)?;
            residuals.push(a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
        }
    }
    Ok(ResidualReport::from_residuals("moment_invariance", &residuals, Vec::new(), tol))
}

/// `rho_hat_g o rho_hat_h = rho_hat_{g+h}` on consecutive parameter pairs.
pub fn verify_functoriality(
    lift: &LiftedAction,
    params: &[Vec<f64>],
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ResidualReport, LiftError> {
    let mut periodic = lift.chart.periodic().to_vec();
    periodic.extend(std::iter::repeat_n(false, lift.chart.dof()));
    let mut residuals = Vec::new();
    for pair in params.chunks(2) {
        let [g, h] = pair else { continue };
        let gh: Vec<f64> = g.iter().zip(h).map(|(a, b)| a + b).collect();
        for z in points {
            let two = lift.apply(g, &lift.apply(h, z)?)?;
            let one = lift.apply(&gh, z)?;
            residuals.push(wrapped_distance(&two, &one, &periodic));
        }
    }
    Ok(ResidualReport::from_residuals("lift_functoriality", &residuals, Vec::new(), tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::sampling::{sample_box, seeded};
    use crate::symplectic::hamiltonian_vector_field;

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn hyperbolic() -> ActionSpec {
        ActionSpec::new(GroupKind::RealLine(1), strings(&["t"]), strings(&["q"]), vec![false], vec![e("exp(-t)*q")])
            .unwrap()
    }

    pub(crate) fn rotation_dilation() -> ActionSpec {
        ActionSpec::new(
            GroupKind::Product(vec![GroupKind::Circle, GroupKind::RealLine(1)]),
            strings(&["th", "t"]),
            strings(&["x1", "x2"]),
            vec![false, false],
            vec![e("exp(-t)*(cos(th)*x1 + sin(th)*x2)"), e("exp(-t)*(-sin(th)*x1 + cos(th)*x2)")],
        )
        .unwrap()
    }

    fn translation(n: usize) -> ActionSpec {
        let qs: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
        let ths: Vec<String> = (1..=n).map(|i| format!("th{i}")).collect();
        let comps = qs.iter().zip(&ths).map(|(q, t)| Expr::var(q) + Expr::var(t)).collect();
        ActionSpec::new(GroupKind::Torus(n), ths, qs, vec![true; n], comps).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            ActionSpec::new(GroupKind::Circle, strings(&["a", "b"]), strings(&["q"]), vec![true], vec![e("q")]),
            Err(LiftError::WrongParamCount { .. })
        ));
        assert!(matches!(
            ActionSpec::new(GroupKind::Circle, strings(&["a"]), strings(&["q"]), vec![true], vec![e("q+z")]),
            Err(LiftError::ForeignVariable(_))
        ));
        assert!(matches!(
            ActionSpec::new(GroupKind::Circle, strings(&["q"]), strings(&["q"]), vec![true], vec![e("q")]),
            Err(LiftError::DuplicateName(_))
        ));
    }

    #[test]
    fn hyperbolic_lift_formula() {
        let lift = cotangent_lift(&hyperbolic()).unwrap();
        assert_eq!(lift.chart().names(), vec!["q", "p"]);
        for (t, q, p) in [(0.3, 1.5, -2.0), (-0.7, 0.2, 0.9)] {
            let out = lift.apply(&[t], &[q, p]).unwrap();
            assert!((out[0] - (-t).exp() * q).abs() < 1e-15);
            assert!((out[1] - t.exp() * p).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_dilation_lift_formula() {
        let lift = cotangent_lift(&rotation_dilation()).unwrap();
        let (th, t): (f64, f64) = (0.4, -0.3);
        let z = [0.5, -1.0, 2.0, 0.25];
        let out = lift.apply(&[th, t], &z).unwrap();
        let (c, s) = (th.cos(), th.sin());
        let expected = [
            (-t).exp() * (c * z[0] + s * z[1]),
            (-t).exp() * (-s * z[0] + c * z[1]),
            t.exp() * (c * z[2] + s * z[3]),
            t.exp() * (-s * z[2] + c * z[3]),
        ];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{out:?} vs {expected:?}");
        }
    }

    #[test]
    fn translation_lift_is_identity_on_fibres() {
        let lift = cotangent_lift(&translation(2)).unwrap();
        let comps = lift.components().unwrap();
        assert_eq!(comps[2], Expr::var("p1"));
        assert_eq!(comps[3], Expr::var("p2"));
    }

    #[test]
    fn fundamental_fields_and_moments() {
        let lift = cotangent_lift(&translation(1)).unwrap();
        let x = lift.fundamental_vector_field(0);
        assert_eq!(x.components, vec![Expr::constant(-1.0), Expr::zero()]);
        assert_eq!(lift.moment_map()[0].eval_at(&["q1", "p1"], &[0.3, 2.0]).unwrap(), -2.0);

        let lift = cotangent_lift(&hyperbolic()).unwrap();
        let x = lift.fundamental_vector_field(0).eval(&[3.0, 5.0]).unwrap();
        assert_eq!(x, vec![3.0, -5.0]);
        assert_eq!(lift.moment_map()[0].eval_at(&["q", "p"], &[3.0, 5.0]).unwrap(), 15.0);

        let lift = cotangent_lift(&rotation_dilation()).unwrap();
        let z = [0.5, -1.0, 2.0, 0.25];
        let xr = lift.fundamental_vector_field(0).eval(&z).unwrap();
        assert_eq!(xr, vec![-z[1], z[0], -z[3], z[2]]);
        let mu = lift.moment_map();
        let names = lift.chart().names();
        let m0 = mu[0].eval_at(&names, &z).unwrap();
        let m1 = mu[1].eval_at(&names, &z).unwrap();
        assert!((m0 - (z[0] * z[3] - z[1] * z[2])).abs() < 1e-15);
        assert!((m1 - (z[0] * z[2] + z[1] * z[3])).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_fields_of_moments_are_the_fundamental_fields() {
        let pts = sample_box(&mut seeded(4), 4, -2.0, 2.0, 50);
        for spec in [rotation_dilation(), translation(2)] {
            let lift = cotangent_lift(&spec).unwrap();
            for (j, mu) in lift.moment_map().iter().enumerate() {
                let xh = hamiltonian_vector_field(mu, lift.chart());
                let xs = lift.fundamental_vector_field(j);
                for z in &pts {
                    let a = xh.eval(z).unwrap();
                    let b = xs.eval(z).unwrap();
                    assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
                }
            }
            assert!(verify_moment_closure(&lift, &pts, 1e-12).unwrap().pass);
        }
    }

    #[test]
    fn invariance_of_example_lifts() {
        let mut rng = seeded(1);
        for spec in [hyperbolic(), rotation_dilation()] {
            let lift = cotangent_lift(&spec).unwrap();
            let params = spec.group().sample(&mut rng, 32);
            let pts = sample_box(&mut rng, lift.chart().dim(), -2.0, 2.0, 64);
            let r = verify_lift_invariance(&lift, &params, &pts, 1e-12).unwrap();
            assert!(r.pass, "{r:?}");
            assert!(verify_functoriality(&lift, &params, &pts, 1e-9).unwrap().pass);
            assert!(verify_moment_invariance(&lift, &params, &pts, 1e-9).unwrap().pass);
            assert!(check_action_axioms(&spec, &params, &pts.iter().map(|z| z[..spec.base_dim()].to_vec()).collect::<Vec<_>>(), 1e-10, 1e-9)
                .unwrap()
                .pass);
        }
    }

    #[test]
    fn broken_lift_fails() {
        let spec = hyperbolic();
        let chart = cotangent_lift(&spec).unwrap().chart().clone();
        let broken = LiftedAction::from_raw(&spec, chart, vec![e("exp(-t)*q"), e("exp(-t)*p")]).unwrap();
        let params = spec.group().sample(&mut seeded(3), 8);
        let pts = sample_box(&mut seeded(3), 2, -2.0, 2.0, 16);
        let r = verify_lift_invariance(&broken, &params, &pts, 1e-9).unwrap();
        assert!(!r.pullback.pass && !r.symplecticity.pass);
    }

    #[test]
    fn numeric_path_matches_closed_form() {
        let spec = rotation_dilation();
        let sym = cotangent_lift(&spec).unwrap();
        let num = cotangent_lift_with(&spec, 0, None).unwrap();
        assert!(num.components().is_none());
        let mut rng = seeded(8);
        let params = spec.group().sample(&mut rng, 6);
        for z in sample_box(&mut rng, 4, -2.0, 2.0, 10) {
            for g in &params {
                let a = sym.apply(g, &z).unwrap();
                let b = num.apply(g, &z).unwrap();
                assert!(wrapped_distance(&a, &b, &[false; 4]) < 1e-12);
                let ja = sym.jacobian(g, &z).unwrap();
                let jb = num.jacobian(g, &z).unwrap();
                assert!((ja - jb).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn large_base_uses_numeric_lift() {
        // a nonlinear shear-and-scale action of R on R^5
        let qs = strings(&["q1", "q2", "q3", "q4", "q5"]);
        let comps = vec![
            e("exp(-t)*q1"),
            e("q2 + t*q3^2"),
            e("q3"),
            e("exp(t)*q4"),
            e("q5 + sin(q3)*t"),
        ];
        let spec = ActionSpec::new(GroupKind::RealLine(1), strings(&["t"]), qs, vec![false; 5], comps).unwrap();
        let lift = cotangent_lift(&spec).unwrap();
        assert!(lift.components().is_none());
        let mut rng = seeded(12);
        let params = spec.group().sample(&mut rng, 8);
        let pts = sample_box(&mut rng, 10, -1.0, 1.0, 16);
        assert!(verify_lift_invariance(&lift, &params, &pts, 1e-9).unwrap().pass);
        assert!(verify_functoriality(&lift, &params, &pts, 1e-9).unwrap().pass);
        assert!(verify_moment_closure(&lift, &pts, 1e-9).unwrap().pass);
    }

    #[test]
    fn non_invertible_jacobian_is_flagged() {
        let spec =
            ActionSpec::new(GroupKind::RealLine(1), strings(&["t"]), strings(&["q"]), vec![false], vec![e("t*q")]).unwrap();
        let lift = cotangent_lift_with(&spec, 0, None).unwrap();
        assert!(matches!(lift.apply(&[0.0], &[1.0, 1.0]), Err(LiftError::NonInvertibleJacobian { .. })));
        let r = verify_lift_invariance(&lift, &[vec![0.0]], &[vec![1.0, 1.0]], 1e-9).unwrap();
        assert_eq!(r.pullback.flagged, vec![0]);
        assert!(!r.pass);
    }

    #[test]
    fn generic_lift_helpers_agree_with_closed_form() {
        let spec = rotation_dilation();
        let lift = cotangent_lift(&spec).unwrap();
        let mu = lift.moment_map();
        let mut rng = seeded(31);
        let params = spec.group().sample(&mut rng, 5);
        for z in sample_box(&mut rng, 4, -2.0, 2.0, 5) {
            let m = lift_moment(&spec, &z).unwrap();
            for (a, b) in m.iter().zip(&mu) {
                assert!((a - b.eval_at(&lift.chart().names(), &z).unwrap()).abs() < 1e-14);
            }
            for g in &params {
                let a = lift_apply(&spec, g, &z).unwrap();
                let b = lift.apply(g, &z).unwrap();
                assert!(wrapped_distance(&a, &b, &[false; 4]) < 1e-13);
            }
        }
    }

    #[test]
    fn wrapping() {
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-15);
        assert!((wrap_angle(-PI - 0.1) - (PI - 0.1)).abs() < 1e-15);
        assert!(wrapped_distance(&[PI - 0.01], &[-PI + 0.01], &[true]) < 0.021);
    }
}
