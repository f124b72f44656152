//! Minimal symbolic scalar expressions.
//!
//! Trees are immutable and reference counted, so clones are cheap and a
//! derivative can share structure with its source. Constructors fold
//! constants and drop additive/multiplicative identities; nothing beyond
//! that is simplified.

mod parse;
mod program;

pub use parse::{parse_expr, ParseError};
pub use program::Program;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops;
use std::sync::Arc;

use thiserror::Error;

/// Errors raised while evaluating an expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("duplicate variable `{0}` in binding")]
    DuplicateBinding(String),
}

/// A node of the expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Arc<str>),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    /// Integer power.
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Sqrt(Expr),
}

/// Symbolic scalar function of named real variables.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn wrap(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn constant(value: f64) -> Expr {
        Expr::wrap(Node::Const(value))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(name: &str) -> Expr {
        Expr::wrap(Node::Var(Arc::from(name)))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(x), _) if x == 0.0 => b.clone(),
            (_, Some(y)) if y == 0.0 => a.clone(),
            _ => Expr::wrap(Node::Add(a.clone(), b.clone())),
        }
    }

    pub fn sub(a: &Expr, b: &Expr) -> Expr {
        Expr::add(a, &b.neg())
    }

    pub fn mul(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::zero(),
            (Some(x), _) if x == 1.0 => b.clone(),
            (_, Some(y)) if y == 1.0 => a.clone(),
            (Some(x), _) if x == -1.0 => b.neg(),
            (_, Some(y)) if y == -1.0 => a.neg(),
            _ => Expr::wrap(Node::Mul(a.clone(), b.clone())),
        }
    }

    pub fn div(a: &Expr, b: &Expr) -> Expr {
        match b.as_const() {
            Some(y) if y != 0.0 => Expr::mul(a, &Expr::constant(1.0 / y)),
            _ => Expr::mul(a, &b.powi(-1)),
        }
    }

    pub fn neg(&self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(self.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Expr {
        if n == 0 {
            return Expr::one();
        }
        if n == 1 {
            return self.clone();
        }
        match self.node() {
            Node::Const(c) => Expr::constant(c.powi(n)),
            Node::Pow(base, m) => match m.checked_mul(n) {
                Some(k) => base.powi(k),
                None => Expr::wrap(Node::Pow(self.clone(), n)),
            },
            _ => Expr::wrap(Node::Pow(self.clone(), n)),
        }
    }

    pub fn sin(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.sin()),
            None => Expr::wrap(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.cos()),
            None => Expr::wrap(Node::Cos(self.clone())),
        }
    }

    pub fn exp(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.exp()),
            None => Expr::wrap(Node::Exp(self.clone())),
        }
    }

    pub fn sqrt(&self) -> Expr {
        match self.as_const() {
            Some(c) if c >= 0.0 => Expr::constant(c.sqrt()),
            _ => Expr::wrap(Node::Sqrt(self.clone())),
        }
    }

    /// Sum of a list of expressions (zero for an empty list).
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expr>) -> Expr {
        terms.into_iter().fold(Expr::zero(), |acc, t| Expr::add(&acc, t))
    }

    /// Exact partial derivative with respect to `var`.
    pub fn diff(&self, var: &str) -> Expr {
        let mut memo = HashMap::new();
        self.diff_memo(var, &mut memo)
    }

    fn diff_memo(&self, var: &str, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if let Some(d) = memo.get(&self.ptr()) {
            return d.clone();
        }
        let d = match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(name) => {
                if &**name == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => Expr::add(&a.diff_memo(var, memo), &b.diff_memo(var, memo)),
            Node::Mul(a, b) => {
                let da = a.diff_memo(var, memo);
                let db = b.diff_memo(var, memo);
                Expr::add(&Expr::mul(&da, b), &Expr::mul(a, &db))
            }
            Node::Neg(a) => a.diff_memo(var, memo).neg(),
            Node::Pow(a, n) => {
                let da = a.diff_memo(var, memo);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    let outer = Expr::mul(&Expr::constant(*n as f64), &a.powi(n - 1));
                    Expr::mul(&outer, &da)
                }
            }
            Node::Sin(a) => Expr::mul(&a.cos(), &a.diff_memo(var, memo)),
            Node::Cos(a) => Expr::mul(&a.sin().neg(), &a.diff_memo(var, memo)),
            Node::Exp(a) => Expr::mul(self, &a.diff_memo(var, memo)),
            Node::Sqrt(a) => {
                let da = a.diff_memo(var, memo);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    Expr::mul(&Expr::mul(&Expr::constant(0.5), &self.powi(-1)), &da)
                }
            }
        };
        memo.insert(self.ptr(), d.clone());
        d
    }

    /// Replace variables by expressions. Unlisted variables are kept.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        let mut memo = HashMap::new();
        self.subst_memo(map, &mut memo)
    }

    fn subst_memo(&self, map: &HashMap<String, Expr>, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.ptr()) {
            return e.clone();
        }
        let out = match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(name) => map.get(&**name).cloned().unwrap_or_else(|| self.clone()),
            Node::Add(a, b) => Expr::add(&a.subst_memo(map, memo), &b.subst_memo(map, memo)),
            Node::Mul(a, b) => Expr::mul(&a.subst_memo(map, memo), &b.subst_memo(map, memo)),
            Node::Neg(a) => a.subst_memo(map, memo).neg(),
            Node::Pow(a, n) => a.subst_memo(map, memo).powi(*n),
            Node::Sin(a) => a.subst_memo(map, memo).sin(),
            Node::Cos(a) => a.subst_memo(map, memo).cos(),
            Node::Exp(a) => a.subst_memo(map, memo).exp(),
            Node::Sqrt(a) => a.subst_memo(map, memo).sqrt(),
        };
        memo.insert(self.ptr(), out.clone());
        out
    }

    /// Substitute numeric values for some variables (others stay symbolic).
    pub fn fix(&self, values: &[(&str, f64)]) -> Expr {
        let map = values
            .iter()
            .map(|(k, v)| (k.to_string(), Expr::constant(*v)))
            .collect();
        self.substitute(&map)
    }

    /// Free variables, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.ptr()) {
                continue;
            }
            match e.node() {
                Node::Const(_) => {}
                Node::Var(name) => {
                    out.insert(name.to_string());
                }
                Node::Add(a, b) | Node::Mul(a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
                Node::Neg(a)
                | Node::Pow(a, _)
                | Node::Sin(a)
                | Node::Cos(a)
                | Node::Exp(a)
                | Node::Sqrt(a) => stack.push(a.clone()),
            }
        }
        out
    }

    pub fn depends_on(&self, var: &str) -> bool {
        self.variables().contains(var)
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.ptr()) {
                continue;
            }
            match e.node() {
                Node::Const(_) | Node::Var(_) => {}
                Node::Add(a, b) | Node::Mul(a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
                Node::Neg(a)
                | Node::Pow(a, _)
                | Node::Sin(a)
                | Node::Cos(a)
                | Node::Exp(a)
                | Node::Sqrt(a) => stack.push(a.clone()),
            }
        }
        seen.len()
    }

    /// Evaluate against a binding.
    pub fn eval(&self, binding: &VarBinding) -> Result<f64, ExprError> {
        let mut memo = HashMap::new();
        self.eval_memo(binding, &mut memo)
    }

    fn eval_memo(&self, b: &VarBinding, memo: &mut HashMap<*const Node, f64>) -> Result<f64, ExprError> {
        if let Some(v) = memo.get(&self.ptr()) {
            return Ok(*v);
        }
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(name) => b
                .get(name)
                .ok_or_else(|| ExprError::UnboundVariable(name.to_string()))?,
            Node::Add(x, y) => x.eval_memo(b, memo)? + y.eval_memo(b, memo)?,
            Node::Mul(x, y) => x.eval_memo(b, memo)? * y.eval_memo(b, memo)?,
            Node::Neg(x) => -x.eval_memo(b, memo)?,
            Node::Pow(x, n) => checked_powi(x.eval_memo(b, memo)?, *n)?,
            Node::Sin(x) => x.eval_memo(b, memo)?.sin(),
            Node::Cos(x) => x.eval_memo(b, memo)?.cos(),
            Node::Exp(x) => x.eval_memo(b, memo)?.exp(),
            Node::Sqrt(x) => checked_sqrt(x.eval_memo(b, memo)?)?,
        };
        memo.insert(self.ptr(), v);
        Ok(v)
    }

    /// Evaluate with variables bound positionally to `names`.
    pub fn eval_at(&self, names: &[&str], values: &[f64]) -> Result<f64, ExprError> {
        let binding = VarBinding::from_pairs(names.iter().copied().zip(values.iter().copied()))?;
        self.eval(&binding)
    }
}

pub(crate) fn checked_powi(x: f64, n: i32) -> Result<f64, ExprError> {
    if n < 0 && x == 0.0 {
        return Err(ExprError::DomainError(format!("0^{n}")));
    }
    Ok(x.powi(n))
}

pub(crate) fn checked_sqrt(x: f64) -> Result<f64, ExprError> {
    if x < 0.0 {
        return Err(ExprError::DomainError(format!("sqrt({x})")));
    }
    Ok(x.sqrt())
}

/// Partial derivatives with respect to each of `vars`.
pub fn gradient(e: &Expr, vars: &[&str]) -> Vec<Expr> {
    vars.iter().map(|v| e.diff(v)).collect()
}

/// Matrix of second partial derivatives, row-major over `vars`.
pub fn hessian(e: &Expr, vars: &[&str]) -> Vec<Vec<Expr>> {
    gradient(e, vars)
        .iter()
        .map(|g| vars.iter().map(|v| g.diff(v)).collect())
        .collect()
}

/// Jacobian of a list of expressions: `out[i][j] = d e_i / d vars_j`.
pub fn jacobian(exprs: &[Expr], vars: &[&str]) -> Vec<Vec<Expr>> {
    exprs.iter().map(|e| gradient(e, vars)).collect()
}

/// Ordered assignment of real values to variable names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarBinding {
    entries: Vec<(String, f64)>,
}

impl VarBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, ExprError> {
        let mut b = VarBinding::new();
        for (k, v) in pairs {
            b.insert(k, v)?;
        }
        Ok(b)
    }

    pub fn insert(&mut self, name: &str, value: f64) -> Result<(), ExprError> {
        if self.entries.iter().any(|(k, _)| k == name) {
            return Err(ExprError::DuplicateBinding(name.to_string()));
        }
        self.entries.push((name.to_string(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// Precedence levels used by Display: 0 sum, 1 product, 2 unary minus, 3 power, 4 atom.
fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) => 0,
        Node::Mul(..) => 1,
        Node::Neg(_) => 2,
        Node::Const(c) if *c < 0.0 || c.is_nan() => 2,
        Node::Pow(..) => 3,
        _ => 4,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c.is_finite() {
        // `{:?}` is the shortest representation that round-trips.
        write!(f, "{c:?}")
    } else if c.is_nan() {
        write!(f, "(0*sqrt(-1))")
    } else if c > 0.0 {
        write!(f, "1e999")
    } else {
        write!(f, "-1e999")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write_const(f, *c),
            Node::Var(name) => write!(f, "{name}"),
            Node::Add(a, b) => {
                write_child(f, a, 0)?;
                match b.node() {
                    Node::Neg(inner) => {
                        write!(f, " - ")?;
                        write_child(f, inner, 1)
                    }
                    _ => {
                        write!(f, " + ")?;
                        write_child(f, b, 1)
                    }
                }
            }
            Node::Mul(a, b) => {
                write_child(f, a, 1)?;
                write!(f, "*")?;
                write_child(f, b, 2)
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, 3)
            }
            Node::Pow(a, n) => {
                write_child(f, a, 4)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $ctor:path) => {
        impl ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $ctor(&self, &rhs)
            }
        }
        impl ops::$trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $ctor(&self, rhs)
            }
        }
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $ctor(self, rhs)
            }
        }
        impl ops::$trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $ctor(self, &rhs)
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $ctor(&self, &Expr::constant(rhs))
            }
        }
        impl ops::$trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $ctor(self, &Expr::constant(rhs))
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $ctor(&Expr::constant(self), &rhs)
            }
        }
        impl ops::$trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $ctor(&Expr::constant(self), rhs)
            }
        }
    };
}

impl_binop!(Add, add, Expr::add);
impl_binop!(Sub, sub, Expr::sub);
impl_binop!(Mul, mul, Expr::mul);
impl_binop!(Div, div, Expr::div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl From<f64> for Expr {
    fn from(value: f64) -> Self {
        Expr::constant(value)
    }
}
