//! Darboux charts, Hamiltonian vector fields, Poisson brackets and the
//! Liouville form.
//!
//! Sign convention: `iota_X omega = -df`. On a [`Orientation::Standard`]
//! chart `omega = sum dx_i ^ dy_i`, which gives `X_f = (-df/dy, df/dx)`.
//! Charts produced by cotangent lifts use [`Orientation::Cotangent`],
//! `omega = d(lambda) = sum dy_i ^ dx_i` with `lambda = sum y_i dx_i`, so that
//! lifted actions are Hamiltonian with moment map `lambda(X#)` under the same
//! `iota_X omega = -df` rule.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, Expr, ExprError, Program};
use crate::linalg::{max_abs, standard_omega};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymplecticError {
    #[error("chart names must be distinct, `{0}` repeats")]
    DuplicateName(String),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("`{0}` is not a coordinate of the chart")]
    ForeignVariable(String),
    #[error("a system on {dof} degrees of freedom needs {dof} functions, got {got}")]
    WrongComponentCount { dof: usize, got: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Which of the two opposite Darboux forms a chart carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `omega = sum dx_i ^ dy_i`
    Standard,
    /// `omega = d(sum y_i dx_i) = sum dy_i ^ dx_i`, the canonical form of `T*M`
    /// with positions `x` and momenta `y`.
    Cotangent,
}

/// A 2n-dimensional Darboux chart. Coordinates are ordered
/// `(x_1..x_n, y_1..y_n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DarbouxChart {
    positions: Vec<String>,
    momenta: Vec<String>,
    periodic: Vec<bool>,
    orientation: Orientation,
}

impl DarbouxChart {
    pub fn new(positions: Vec<String>, momenta: Vec<String>) -> Result<Self, SymplecticError> {
        if positions.len() != momenta.len() {
            return Err(SymplecticError::DimensionMismatch {
                expected: positions.len(),
                got: momenta.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in positions.iter().chain(&momenta) {
            if !seen.insert(name.as_str()) {
                return Err(SymplecticError::DuplicateName(name.clone()));
            }
        }
        let n = positions.len();
        Ok(DarbouxChart {
            positions,
            momenta,
            periodic: vec![false; n],
            orientation: Orientation::Standard,
        })
    }

    /// `x, y` for one degree of freedom, `x1..xn, y1..yn` otherwise.
    pub fn standard(n: usize) -> Self {
        let (xs, ys) = if n == 1 {
            (vec!["x".to_string()], vec!["y".to_string()])
        } else {
            (
                (1..=n).map(|i| format!("x{i}")).collect(),
                (1..=n).map(|i| format!("y{i}")).collect(),
            )
        };
        DarbouxChart::new(xs, ys).expect("generated names are distinct")
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    /// Mark position coordinates as 2pi-periodic (torus directions).
    pub fn with_periodic(mut self, periodic: Vec<bool>) -> Result<Self, SymplecticError> {
        if periodic.len() != self.dof() {
            return Err(SymplecticError::DimensionMismatch { expected: self.dof(), got: periodic.len() });
        }
        self.periodic = periodic;
        Ok(self)
    }

    pub fn dof(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.dof()
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn positions(&self) -> &[String] {
        &self.positions
    }

    pub fn momenta(&self) -> &[String] {
        &self.momenta
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    /// All coordinate names in chart order.
    pub fn names(&self) -> Vec<&str> {
        self.positions.iter().chain(&self.momenta).map(String::as_str).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| *n == name)
    }

    /// Matrix of the symplectic form: `omega(u, v) = u^T W v`.
    pub fn omega(&self) -> DMatrix<f64> {
        let j = standard_omega(self.dof());
        match self.orientation {
            Orientation::Standard => j,
            Orientation::Cotangent => -j,
        }
    }

    fn sign(&self) -> f64 {
        match self.orientation {
            Orientation::Standard => 1.0,
            Orientation::Cotangent => -1.0,
        }
    }

    /// Check that every free variable of `e` is a chart coordinate.
    pub fn check_expr(&self, e: &Expr) -> Result<(), SymplecticError> {
        let names: HashSet<&str> = self.names().into_iter().collect();
        for v in e.variables() {
            if !names.contains(v.as_str()) {
                return Err(SymplecticError::ForeignVariable(v));
            }
        }
        Ok(())
    }

    pub fn check_point(&self, p: &[f64]) -> Result<(), SymplecticError> {
        if p.len() != self.dim() {
            return Err(SymplecticError::DimensionMismatch { expected: self.dim(), got: p.len() });
        }
        Ok(())
    }
}

/// A point of a chart; coordinates follow the chart order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhasePoint {
    pub coords: Vec<f64>,
}

impl PhasePoint {
    pub fn new(chart: &DarbouxChart, coords: Vec<f64>) -> Result<Self, SymplecticError> {
        chart.check_point(&coords)?;
        Ok(PhasePoint { coords })
    }

    pub fn origin(chart: &DarbouxChart) -> Self {
        PhasePoint { coords: vec![0.0; chart.dim()] }
    }
}

/// An ordered tuple `F = (f_1..f_n)` on a chart with n degrees of freedom.
#[derive(Debug, Clone)]
pub struct MomentMapSystem {
    chart: DarbouxChart,
    components: Vec<Expr>,
}

impl MomentMapSystem {
    pub fn new(chart: DarbouxChart, components: Vec<Expr>) -> Result<Self, SymplecticError> {
        if components.len() != chart.dof() {
            return Err(SymplecticError::WrongComponentCount { dof: chart.dof(), got: components.len() });
        }
        for f in &components {
            chart.check_expr(f)?;
        }
        Ok(MomentMapSystem { chart, components })
    }

    pub fn chart(&self) -> &DarbouxChart {
        &self.chart
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn dof(&self) -> usize {
        self.chart.dof()
    }

    /// Values of all components at `p`.
    pub fn values(&self, p: &[f64]) -> Result<Vec<f64>, SymplecticError> {
        self.chart.check_point(p)?;
        let names = self.chart.names();
        let prog = Program::compile(&self.components, &names)?;
        Ok(prog.eval(p)?)
    }

    /// The n x 2n matrix of gradients at `p`.
    pub fn differential(&self, p: &[f64]) -> Result<DMatrix<f64>, SymplecticError> {
        self.chart.check_point(p)?;
        let names = self.chart.names();
        let grads: Vec<Expr> = self.components.iter().flat_map(|f| expr::gradient(f, &names)).collect();
        let vals = Program::compile(&grads, &names)?.eval(p)?;
        Ok(DMatrix::from_row_slice(self.dof(), self.chart.dim(), &vals))
    }

    /// Hessian matrices of each component at `p`.
    pub fn hessians(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>, SymplecticError> {
        self.components.iter().map(|f| hessian_at(f, &self.chart, p)).collect()
    }
}

/// Numeric Hessian (from the symbolic one) of `f` at `p`.
pub fn hessian_at(f: &Expr, chart: &DarbouxChart, p: &[f64]) -> Result<DMatrix<f64>, SymplecticError> {
    chart.check_point(p)?;
    let names = chart.names();
    let h: Vec<Expr> = expr::hessian(f, &names).into_iter().flatten().collect();
    let vals = Program::compile(&h, &names)?.eval(p)?;
    Ok(DMatrix::from_row_slice(chart.dim(), chart.dim(), &vals))
}

/// Numeric gradient of `f` at `p`.
pub fn gradient_at(f: &Expr, chart: &DarbouxChart, p: &[f64]) -> Result<DVector<f64>, SymplecticError> {
    chart.check_point(p)?;
    let names = chart.names();
    let g = expr::gradient(f, &names);
    Ok(DVector::from_vec(Program::compile(&g, &names)?.eval(p)?))
}

/// Vector field given componentwise in chart order.
#[derive(Debug, Clone)]
pub struct VectorFieldExpr {
    pub chart: DarbouxChart,
    pub components: Vec<Expr>,
}

impl VectorFieldExpr {
    pub fn new(chart: DarbouxChart, components: Vec<Expr>) -> Result<Self, SymplecticError> {
        if components.len() != chart.dim() {
            return Err(SymplecticError::DimensionMismatch { expected: chart.dim(), got: components.len() });
        }
        Ok(VectorFieldExpr { chart, components })
    }

    pub fn eval(&self, p: &[f64]) -> Result<Vec<f64>, SymplecticError> {
        self.chart.check_point(p)?;
        Ok(Program::compile(&self.components, &self.chart.names())?.eval(p)?)
    }

    pub fn compile(&self) -> Result<Program, SymplecticError> {
        Ok(Program::compile(&self.components, &self.chart.names())?)
    }
}

/// `X_f` defined by `iota_X omega = -df`.
pub fn hamiltonian_vector_field(f: &Expr, chart: &DarbouxChart) -> VectorFieldExpr {
    let n = chart.dof();
    let s = chart.sign();
    let mut comps = Vec::with_capacity(2 * n);
    for y in chart.momenta() {
        comps.push(f.diff(y) * (-s));
    }
    for x in chart.positions() {
        comps.push(f.diff(x) * s);
    }
    VectorFieldExpr { chart: chart.clone(), components: comps }
}

/// `{f, g} = omega(X_f, X_g)`; on a standard chart
/// `sum_i df/dx_i dg/dy_i - df/dy_i dg/dx_i`.
pub fn poisson_bracket(f: &Expr, g: &Expr, chart: &DarbouxChart) -> Expr {
    let terms: Vec<Expr> = chart
        .positions()
        .iter()
        .zip(chart.momenta())
        .map(|(x, y)| f.diff(x) * g.diff(y) - f.diff(y) * g.diff(x))
        .collect();
    Expr::sum(&terms) * chart.sign()
}

/// Outcome of a sampled residual check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub check: String,
    pub max_residual: f64,
    pub tol: f64,
    pub samples: usize,
    pub pass: bool,
    /// Index of the sample with the largest residual.
    pub worst_sample: Option<usize>,
    /// Samples where the check could not be carried out (singular Jacobian,
    /// domain error).
    pub flagged: Vec<usize>,
}

impl ResidualReport {
    pub fn from_residuals(check: &str, residuals: &[f64], flagged: Vec<usize>, tol: f64) -> Self {
        let mut worst = None;
        let mut max = 0.0f64;
        for (i, r) in residuals.iter().enumerate() {
            if r.is_nan() || *r > max {
                max = if r.is_nan() { f64::INFINITY } else { *r };
                worst = Some(i);
            }
        }
        ResidualReport {
            check: check.to_string(),
            max_residual: max,
            tol,
            samples: residuals.len(),
            pass: max <= tol && flagged.is_empty(),
            worst_sample: worst,
            flagged,
        }
    }
}

/// Pairwise involution check `{f_i, f_j} = 0` on the samples.
#[derive(Debug, Clone, Serialize)]
pub struct InvolutionReport {
    pub residual: ResidualReport,
    /// `(i, j, max |{f_i, f_j}|)` for each pair.
    pub pairs: Vec<(usize, usize, f64)>,
}

pub fn check_involution(
    system: &MomentMapSystem,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<InvolutionReport, SymplecticError> {
    let chart = system.chart();
    let f = system.components();
    let mut brackets = Vec::new();
    let mut idx = Vec::new();
    for i in 0..f.len() {
        for j in (i + 1)..f.len() {
            brackets.push(poisson_bracket(&f[i], &f[j], chart));
            idx.push((i, j));
        }
    }
    let prog = Program::compile(&brackets, &chart.names())?;
    let mut regs = prog.scratch();
    let mut out = vec![0.0; brackets.len()];
    let mut pair_max = vec![0.0f64; brackets.len()];
    let mut residuals = Vec::with_capacity(samples.len());
    let mut flagged = Vec::new();
    for (s, p) in samples.iter().enumerate() {
        chart.check_point(p)?;
        if prog.eval_into(p, &mut regs, &mut out).is_err() {
            flagged.push(s);
            residuals.push(0.0);
            continue;
        }
        let mut worst = 0.0f64;
        for (k, v) in out.iter().enumerate() {
            pair_max[k] = pair_max[k].max(v.abs());
            worst = worst.max(v.abs());
        }
        residuals.push(worst);
    }
    Ok(InvolutionReport {
        residual: ResidualReport::from_residuals("involution", &residuals, flagged, tol),
        pairs: idx.into_iter().zip(pair_max).map(|((i, j), m)| (i, j, m)).collect(),
    })
}

/// `lambda = sum y_i dx_i` as a covector in chart order: `(y_1..y_n, 0..0)`.
pub fn liouville_form(chart: &DarbouxChart) -> Vec<Expr> {
    chart
        .momenta()
        .iter()
        .map(|y| Expr::var(y))
        .chain(std::iter::repeat_n(Expr::zero(), chart.dof()))
        .collect()
}

/// `<alpha, v>` for numeric vectors.
pub fn pair(covector: &[f64], vector: &[f64]) -> f64 {
    covector.iter().zip(vector).map(|(a, b)| a * b).sum()
}

/// `max |J^T W J - W|`.
pub fn symplecticity_residual(jac: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
    max_abs(&(jac.transpose() * omega * jac - omega))
}

/// `max |(phi* alpha)(z) - alpha(z)|` given `alpha` at `phi(z)`, at `z`, and
/// the Jacobian of `phi` at `z`.
pub fn pullback_residual(form_at_image: &[f64], jac: &DMatrix<f64>, form_at_point: &[f64]) -> f64 {
    let a = DVector::from_column_slice(form_at_image);
    let pulled = jac.transpose() * a;
    pulled
        .iter()
        .zip(form_at_point)
        .fold(0.0f64, |acc, (u, v)| acc.max((u - v).abs()))
}

/// Compiled map `z -> phi(z)` on a chart together with its symbolic Jacobian.
pub struct CompiledMap {
    value: Program,
    jacobian: Program,
    dim: usize,
}

impl CompiledMap {
    pub fn new(map: &[Expr], chart: &DarbouxChart) -> Result<Self, SymplecticError> {
        if map.len() != chart.dim() {
            return Err(SymplecticError::DimensionMismatch { expected: chart.dim(), got: map.len() });
        }
        for e in map {
            chart.check_expr(e)?;
        }
        let names = chart.names();
        let jac: Vec<Expr> = expr::jacobian(map, &names).into_iter().flatten().collect();
        Ok(CompiledMap {
            value: Program::compile(map, &names)?,
            jacobian: Program::compile(&jac, &names)?,
            dim: chart.dim(),
        })
    }

    pub fn value(&self, z: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.value.eval(z)
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let v = self.jacobian.eval(z)?;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &v))
    }
}

const SINGULAR_DET: f64 = 1e-12;

/// Sampled test of `J^T W J = W` for a map given by 2n expressions.
pub fn is_symplectomorphism(
    map: &[Expr],
    chart: &DarbouxChart,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<ResidualReport, SymplecticError> {
    let compiled = CompiledMap::new(map, chart)?;
    let omega = chart.omega();
    let mut residuals = Vec::with_capacity(samples.len());
    let mut flagged = Vec::new();
    for (s, z) in samples.iter().enumerate() {
        chart.check_point(z)?;
        match compiled.jacobian(z) {
            Ok(j) => {
                if j.determinant().abs() <= SINGULAR_DET {
                    flagged.push(s);
                }
                residuals.push(symplecticity_residual(&j, &omega));
            }
            Err(_) => {
                flagged.push(s);
                residuals.push(0.0);
            }
        }
    }
    Ok(ResidualReport::from_residuals("symplecticity", &residuals, flagged, tol))
}

/// Sampled residual of `phi* alpha - alpha` for a covector field `alpha`.
pub fn pullback_form_residual(
    map: &[Expr],
    form: &[Expr],
    chart: &DarbouxChart,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<ResidualReport, SymplecticError> {
    if form.len() != chart.dim() {
        return Err(SymplecticError::DimensionMismatch { expected: chart.dim(), got: form.len() });
    }
    let compiled = CompiledMap::new(map, chart)?;
    let form_prog = Program::compile(form, &chart.names())?;
    let mut residuals = Vec::with_capacity(samples.len());
    let mut flagged = Vec::new();
    for (s, z) in samples.iter().enumerate() {
        chart.check_point(z)?;
        let eval = || -> Result<f64, ExprError> {
            let image = compiled.value(z)?;
            let j = compiled.jacobian(z)?;
            let at_image = form_prog.eval(&image)?;
            let at_point = form_prog.eval(z)?;
            Ok(pullback_residual(&at_image, &j, &at_point))
        };
        match eval() {
            Ok(r) => residuals.push(r),
            Err(_) => {
                flagged.push(s);
                residuals.push(0.0);
            }
        }
    }
    Ok(ResidualReport::from_residuals("form_pullback", &residuals, flagged, tol))
}

/// Sampled residual of `iota_X omega + dh` (zero iff `X = X_h`).
pub fn hamiltonian_closure_residual(
    field: &VectorFieldExpr,
    h: &Expr,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<ResidualReport, SymplecticError> {
    let chart = &field.chart;
    let omega = chart.omega();
    let xprog = field.compile()?;
    let gprog = Program::compile(&expr::gradient(h, &chart.names()), &chart.names())?;
    let mut residuals = Vec::with_capacity(samples.len());
    let mut flagged = Vec::new();
    for (s, z) in samples.iter().enumerate() {
        chart.check_point(z)?;
        match (xprog.eval(z), gprog.eval(z)) {
            (Ok(x), Ok(g)) => {
                let contracted = omega.transpose() * DVector::from_vec(x);
                let r = contracted
                    .iter()
                    .zip(&g)
                    .fold(0.0f64, |acc, (a, b)| acc.max((a + b).abs()));
                residuals.push(r);
            }
            _ => {
                flagged.push(s);
                residuals.push(0.0);
            }
        }
    }
    Ok(ResidualReport::from_residuals("hamiltonian_closure", &residuals, flagged, tol))
}
