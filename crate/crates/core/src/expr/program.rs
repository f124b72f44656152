use std::cell::RefCell;
use std::collections::HashMap;

use super::{checked_powi, checked_sqrt, Expr, ExprError, Node};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Pow(usize, i32),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Sqrt(usize),
}

/// A set of expressions compiled against a fixed variable order.
///
/// Shared subtrees are evaluated once. [`Program::eval`] reuses a
/// thread-local register file; [`Program::eval_into`] takes an explicit one.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    outputs: Vec<usize>,
    arity: usize,
}

impl Program {
    /// Compile `exprs` with variables resolved by position in `vars`.
    pub fn compile(exprs: &[Expr], vars: &[&str]) -> Result<Program, ExprError> {
        let index: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut ops = Vec::new();
        let mut memo: HashMap<*const Node, usize> = HashMap::new();
        let mut outputs = Vec::with_capacity(exprs.len());
        for e in exprs {
            outputs.push(emit(e, &index, &mut ops, &mut memo)?);
        }
        Ok(Program { ops, outputs, arity: vars.len() })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.ops.len()]
    }

    /// Evaluate into `out` using `regs` as scratch space.
    pub fn eval_into(&self, x: &[f64], regs: &mut Vec<f64>, out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(x.len(), self.arity);
        regs.resize(self.ops.len(), 0.0);
        for (i, op) in self.ops.iter().enumerate() {
            regs[i] = match *op {
                Op::Const(c) => c,
                Op::Var(k) => x[k],
                Op::Add(a, b) => regs[a] + regs[b],
                Op::Mul(a, b) => regs[a] * regs[b],
                Op::Neg(a) => -regs[a],
                Op::Pow(a, n) => checked_powi(regs[a], n)?,
                Op::Sin(a) => regs[a].sin(),
                Op::Cos(a) => regs[a].cos(),
                Op::Exp(a) => regs[a].exp(),
                Op::Sqrt(a) => checked_sqrt(regs[a])?,
            };
        }
        for (o, &r) in out.iter_mut().zip(&self.outputs) {
            *o = regs[r];
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        thread_local! {
            static REGS: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
        }
        let mut out = vec![0.0; self.outputs.len()];
        REGS.with_borrow_mut(|regs| self.eval_into(x, regs, &mut out))?;
        Ok(out)
    }
}

fn emit(
    e: &Expr,
    index: &HashMap<&str, usize>,
    ops: &mut Vec<Op>,
    memo: &mut HashMap<*const Node, usize>,
) -> Result<usize, ExprError> {
    if let Some(&r) = memo.get(&e.ptr()) {
        return Ok(r);
    }
    let op = match e.node() {
        Node::Const(c) => Op::Const(*c),
        Node::Var(name) => Op::Var(
            *index
                .get(&**name)
                .ok_or_else(|| ExprError::UnboundVariable(name.to_string()))?,
        ),
        Node::Add(a, b) => {
            let ra = emit(a, index, ops, memo)?;
            let rb = emit(b, index, ops, memo)?;
            Op::Add(ra, rb)
        }
        Node::Mul(a, b) => {
            let ra = emit(a, index, ops, memo)?;
            let rb = emit(b, index, ops, memo)?;
            Op::Mul(ra, rb)
        }
        Node::Neg(a) => Op::Neg(emit(a, index, ops, memo)?),
        Node::Pow(a, n) => Op::Pow(emit(a, index, ops, memo)?, *n),
        Node::Sin(a) => Op::Sin(emit(a, index, ops, memo)?),
        Node::Cos(a) => Op::Cos(emit(a, index, ops, memo)?),
        Node::Exp(a) => Op::Exp(emit(a, index, ops, memo)?),
        Node::Sqrt(a) => Op::Sqrt(emit(a, index, ops, memo)?),
    };
    ops.push(op);
    let r = ops.len() - 1;
    memo.insert(e.ptr(), r);
    Ok(r)
}
