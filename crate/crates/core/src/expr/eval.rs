use std::collections::BTreeMap;

use super::Expr;
use crate::error::EvalError;
use crate::symbols::Symbol;

/// Symbol values used for evaluation.
pub type Assignment = BTreeMap<Symbol, f64>;

fn checked_div(a: f64, b: f64) -> Result<f64, EvalError> {
    if b == 0.0 {
        Err(EvalError::DivisionByZero)
    } else {
        Ok(a / b)
    }
}

fn checked_powi(b: f64, k: i32) -> Result<f64, EvalError> {
    if k < 0 && b == 0.0 {
        Err(EvalError::DivisionByZero)
    } else {
        Ok(b.powi(k))
    }
}

impl Expr {
    /// IEEE double evaluation of the tree.
    pub fn eval(&self, values: &Assignment) -> Result<f64, EvalError> {
        self.eval_with(&|s| values.get(s).copied())
    }

    pub fn eval_with(&self, lookup: &dyn Fn(&Symbol) -> Option<f64>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Sym(s) => lookup(s).ok_or_else(|| EvalError::MissingSymbol(s.to_string()))?,
            Expr::Add(v) => {
                let mut it = v.iter();
                let mut acc = match it.next() {
                    Some(e) => e.eval_with(lookup)?,
                    None => 0.0,
                };
                for e in it {
                    acc += e.eval_with(lookup)?;
                }
                acc
            }
            Expr::Mul(v) => {
                let mut it = v.iter();
                let mut acc = match it.next() {
                    Some(e) => e.eval_with(lookup)?,
                    None => 1.0,
                };
                for e in it {
                    acc *= e.eval_with(lookup)?;
                }
                acc
            }
            Expr::Pow(b, k) => checked_powi(b.eval_with(lookup)?, *k)?,
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Div(a, b) => checked_div(a.eval_with(lookup)?, b.eval_with(lookup)?)?,
            Expr::Sin(a) => a.eval_with(lookup)?.sin(),
            Expr::Cos(a) => a.eval_with(lookup)?.cos(),
        })
    }

    /// Resolves symbols to slots of `layout` for fast repeated evaluation.
    pub fn compile(&self, layout: &[Symbol]) -> Result<CompiledExpr, EvalError> {
        let mut code = Vec::with_capacity(self.size());
        emit(self, layout, &mut code)?;
        Ok(CompiledExpr { code })
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Load(usize),
    Add(usize),
    Mul(usize),
    Pow(i32),
    Neg,
    Div,
    Sin,
    Cos,
}

fn emit(e: &Expr, layout: &[Symbol], code: &mut Vec<Op>) -> Result<(), EvalError> {
    match e {
        Expr::Const(c) => code.push(Op::Const(*c)),
        Expr::Sym(s) => {
            let i = layout
                .iter()
                .position(|l| l == s)
                .ok_or_else(|| EvalError::MissingSymbol(s.to_string()))?;
            code.push(Op::Load(i));
        }
        Expr::Add(v) | Expr::Mul(v) => {
            for t in v {
                emit(t, layout, code)?;
            }
            code.push(if matches!(e, Expr::Add(_)) { Op::Add(v.len()) } else { Op::Mul(v.len()) });
        }
        Expr::Pow(b, k) => {
            emit(b, layout, code)?;
            code.push(Op::Pow(*k));
        }
        Expr::Neg(a) => {
            emit(a, layout, code)?;
            code.push(Op::Neg);
        }
        Expr::Div(a, b) => {
            emit(a, layout, code)?;
            emit(b, layout, code)?;
            code.push(Op::Div);
        }
        Expr::Sin(a) => {
            emit(a, layout, code)?;
            code.push(Op::Sin);
        }
        Expr::Cos(a) => {
            emit(a, layout, code)?;
            code.push(Op::Cos);
        }
    }
    Ok(())
}

/// A postfix program equivalent to an [`Expr`], reading symbol values by
/// position. Produces bit-identical results to [`Expr::eval`].
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    code: Vec<Op>,
}

impl CompiledExpr {
    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        let mut stack: Vec<f64> = Vec::with_capacity(16);
        for op in &self.code {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Load(i) => stack.push(slots[i]),
                Op::Add(n) | Op::Mul(n) => {
                    let start = stack.len() - n;
                    let mut acc = if n == 0 {
                        if matches!(op, Op::Add(_)) { 0.0 } else { 1.0 }
                    } else {
                        stack[start]
                    };
                    for &v in stack.iter().skip(start + 1) {
                        if matches!(op, Op::Add(_)) {
                            acc += v;
                        } else {
                            acc *= v;
                        }
                    }
                    stack.truncate(start);
                    stack.push(acc);
                }
                Op::Pow(k) => {
                    let b = stack.pop().unwrap();
                    stack.push(checked_powi(b, k)?);
                }
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(-a);
                }
                Op::Div => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(checked_div(a, b)?);
                }
                Op::Sin => {
                    let a = stack.pop().unwrap();
                    stack.push(a.sin());
                }
                Op::Cos => {
                    let a = stack.pop().unwrap();
                    stack.push(a.cos());
                }
            }
        }
        Ok(stack.pop().unwrap_or(0.0))
    }
}
