//! Smooth maps with second-order jets, and their cotangent lifts.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{self, Expr, ExprError, Program};
use crate::lift::{default_momentum_name, inverse_transpose, SYMBOLIC_LIFT_MAX_DIM};
use crate::symplectic::{CompiledMap, DarbouxChart, Orientation, SymplecticError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Jacobian is not invertible at {point:?} (|det| = {det:.3e})")]
    NonInvertibleJacobian { point: Vec<f64>, det: f64 },
}

/// Value, Jacobian and the derivatives `d/dx_k` of the Jacobian.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub second: Vec<DMatrix<f64>>,
}

pub trait SmoothMap: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<Vec<f64>, MapError>;
    fn jet(&self, x: &[f64]) -> Result<Jet, MapError>;
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, MapError> {
        Ok(self.jet(x)?.jacobian)
    }
    /// Closed-form components, when the map has them.
    fn exprs(&self) -> Option<&[Expr]> {
        None
    }
}

impl<T: SmoothMap + ?Sized> SmoothMap for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        (**self).value(x)
    }
    fn jet(&self, x: &[f64]) -> Result<Jet, MapError> {
        (**self).jet(x)
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, MapError> {
        (**self).jacobian(x)
    }
    fn exprs(&self) -> Option<&[Expr]> {
        (**self).exprs()
    }
}

/// A map `R^m -> R^m` given by expressions in named variables.
#[derive(Debug, Clone)]
pub struct ClosedMap {
    names: Vec<String>,
    exprs: Vec<Expr>,
    value: Program,
    jac: Program,
    second: Program,
}

impl ClosedMap {
    pub fn new(names: Vec<String>, exprs: Vec<Expr>) -> Result<Self, MapError> {
        if exprs.len() != names.len() {
            return Err(MapError::DimensionMismatch { expected: names.len(), got: exprs.len() });
        }
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let jac = expr::jacobian(&exprs, &vars);
        let flat: Vec<Expr> = jac.iter().flatten().cloned().collect();
        let second: Vec<Expr> = vars
            .iter()
            .flat_map(|k| flat.iter().map(move |e| e.diff(k)))
            .collect();
        Ok(ClosedMap {
            value: Program::compile(&exprs, &vars)?,
            jac: Program::compile(&flat, &vars)?,
            second: Program::compile(&second, &vars)?,
            names,
            exprs,
        })
    }

    pub fn identity(names: Vec<String>) -> Self {
        let exprs = names.iter().map(|n| Expr::var(n)).collect();
        ClosedMap::new(names, exprs).expect("identity map is well formed")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn check(&self, x: &[f64]) -> Result<(), MapError> {
        if x.len() != self.names.len() {
            return Err(MapError::DimensionMismatch { expected: self.names.len(), got: x.len() });
        }
        Ok(())
    }
}

impl SmoothMap for ClosedMap {
    fn dim(&self) -> usize {
        self.names.len()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        self.check(x)?;
        Ok(self.value.eval(x)?)
    }

    fn jet(&self, x: &[f64]) -> Result<Jet, MapError> {
        self.check(x)?;
        let m = self.dim();
        let second = self.second.eval(x)?;
        Ok(Jet {
            value: self.value.eval(x)?,
            jacobian: DMatrix::from_row_slice(m, m, &self.jac.eval(x)?),
            second: second.chunks(m * m).map(|c| DMatrix::from_row_slice(m, m, c)).collect(),
        })
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, MapError> {
        self.check(x)?;
        let m = self.dim();
        Ok(DMatrix::from_row_slice(m, m, &self.jac.eval(x)?))
    }

    fn exprs(&self) -> Option<&[Expr]> {
        Some(&self.exprs)
    }
}

/// Cotangent lift `(q, p) -> (phi(q), (d phi_q)^{-T} p)` of a base map.
pub struct LiftedMap<M> {
    map: M,
    chart: DarbouxChart,
    symbolic: Option<(Vec<Expr>, CompiledMap)>,
}

/// Lift `phi` to `T*M`. Base names come from `base`; momenta use the
/// default pairing (`q -> p`, `x -> y`).
pub fn lift_conjugation<M: SmoothMap>(phi: M, base: &[String], periodic: &[bool]) -> Result<LiftedMap<M>, MapError> {
    let m = phi.dim();
    if base.len() != m {
        return Err(MapError::DimensionMismatch { expected: m, got: base.len() });
    }
    let momenta = base.iter().map(|q| default_momentum_name(q)).collect();
    let chart = DarbouxChart::new(base.to_vec(), momenta)?
        .with_orientation(Orientation::Cotangent)
        .with_periodic(periodic.to_vec())?;
    let symbolic = match phi.exprs() {
        Some(exprs) if m <= SYMBOLIC_LIFT_MAX_DIM => {
            let vars: Vec<&str> = base.iter().map(String::as_str).collect();
            let inv_t = inverse_transpose(&expr::jacobian(exprs, &vars));
            let ps: Vec<Expr> = chart.momenta().iter().map(|p| Expr::var(p)).collect();
            let fibre = inv_t
                .iter()
                .map(|row| Expr::sum(&row.iter().zip(&ps).map(|(a, p)| a * p).collect::<Vec<_>>()));
            let comps: Vec<Expr> = exprs.iter().cloned().chain(fibre).collect();
            let compiled = CompiledMap::new(&comps, &chart)?;
            Some((comps, compiled))
        }
        _ => None,
    };
    Ok(LiftedMap { map: phi, chart, symbolic })
}

impl<M: SmoothMap> LiftedMap<M> {
    pub fn chart(&self) -> &DarbouxChart {
        &self.chart
    }

    pub fn base_map(&self) -> &M {
        &self.map
    }

    pub fn components(&self) -> Option<&[Expr]> {
        self.symbolic.as_ref().map(|(c, _)| c.as_slice())
    }

    fn inverse_transpose(jac: &DMatrix<f64>, q: &[f64]) -> Result<DMatrix<f64>, MapError> {
        let det = jac.determinant();
        jac.transpose()
            .try_inverse()
            .ok_or_else(|| MapError::NonInvertibleJacobian { point: q.to_vec(), det })
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>, MapError> {
        self.chart.check_point(z)?;
        if let Some((_, c)) = &self.symbolic {
            return Ok(c.value(z)?);
        }
        let (q, p) = z.split_at(self.chart.dof());
        let jet = self.map.jet(q)?;
        let jit = Self::inverse_transpose(&jet.jacobian, q)?;
        let mut out = jet.value;
        out.extend((jit * DVector::from_column_slice(p)).iter());
        Ok(out)
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, MapError> {
        self.chart.check_point(z)?;
        if let Some((_, c)) = &self.symbolic {
            return Ok(c.jacobian(z)?);
        }
        let m = self.chart.dof();
        let (q, p) = z.split_at(m);
        let jet = self.map.jet(q)?;
        let jit = Self::inverse_transpose(&jet.jacobian, q)?;
        let fibre = &jit * DVector::from_column_slice(p);
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        out.view_mut((0, 0), (m, m)).copy_from(&jet.jacobian);
        out.view_mut((m, m), (m, m)).copy_from(&jit);
        for (k, dk) in jet.second.iter().enumerate() {
            let col = -(&jit * dk.transpose() * &fibre);
            out.view_mut((m, k), (m, 1)).copy_from(&col);
        }
        Ok(out)
    }
}
