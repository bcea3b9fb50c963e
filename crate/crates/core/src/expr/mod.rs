//! Symbolic scalar expressions.
//!
//! The node set is deliberately small: constants, symbols, n-ary sums and
//! products, integer powers, negation, quotients, `sin` and `cos`. Every
//! Lie derivative and controller formula in the crate lives in this fragment.
//!
//! Grammar accepted by [`parse_expr`] and emitted by the `Display` impl:
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" [ "-" ] integer ] ;
//! primary = number | ident | ("sin" | "cos") "(" expr ")" | "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ident   = (letter | "_") { letter | digit | "_" } ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`.

mod diff;
mod eval;
mod parse;
mod print;
mod simplify;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::ops;

pub use eval::{Assignment, CompiledExpr};
pub use parse::parse_expr;
pub use simplify::simplify;

use crate::symbols::Symbol;

#[derive(Clone, Debug)]
pub enum Expr {
    Const(f64),
    Sym(Symbol),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn zero() -> Self {
        Expr::Const(0.0)
    }

    pub fn one() -> Self {
        Expr::Const(1.0)
    }

    pub fn sym(name: &str) -> Self {
        Expr::Sym(Symbol::new(name))
    }

    pub fn sin(self) -> Self {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Self {
        Expr::Cos(Box::new(self))
    }

    pub fn powi(self, k: i32) -> Self {
        Expr::Pow(Box::new(self), k)
    }

    /// True for the literal constant zero (no simplification is attempted).
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Expr::Const(_) => 0,
            Expr::Sym(_) => 1,
            Expr::Add(_) => 2,
            Expr::Mul(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Neg(_) => 5,
            Expr::Div(..) => 6,
            Expr::Sin(_) => 7,
            Expr::Cos(_) => 8,
        }
    }

    /// All symbols occurring in the expression.
    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Const(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Add(v) | Expr::Mul(v) => v.iter().for_each(|e| e.collect_symbols(out)),
            Expr::Pow(b, _) | Expr::Neg(b) | Expr::Sin(b) | Expr::Cos(b) => b.collect_symbols(out),
            Expr::Div(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }

    pub fn contains(&self, sym: &Symbol) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Sym(s) => s == sym,
            Expr::Add(v) | Expr::Mul(v) => v.iter().any(|e| e.contains(sym)),
            Expr::Pow(b, _) | Expr::Neg(b) | Expr::Sin(b) | Expr::Cos(b) => b.contains(sym),
            Expr::Div(a, b) => a.contains(sym) || b.contains(sym),
        }
    }

    pub fn contains_any(&self, syms: &[Symbol]) -> bool {
        syms.iter().any(|s| self.contains(s))
    }

    /// Replaces every occurrence of the mapped symbols. No simplification.
    pub fn substitute(&self, map: &BTreeMap<Symbol, Expr>) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Sym(s) => map.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::Add(v) => Expr::Add(v.iter().map(|e| e.substitute(map)).collect()),
            Expr::Mul(v) => Expr::Mul(v.iter().map(|e| e.substitute(map)).collect()),
            Expr::Pow(b, k) => Expr::Pow(Box::new(b.substitute(map)), *k),
            Expr::Neg(b) => Expr::Neg(Box::new(b.substitute(map))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Sin(b) => Expr::Sin(Box::new(b.substitute(map))),
            Expr::Cos(b) => Expr::Cos(Box::new(b.substitute(map))),
        }
    }

    pub fn substitute_one(&self, sym: &Symbol, value: &Expr) -> Expr {
        let mut map = BTreeMap::new();
        map.insert(sym.clone(), value.clone());
        self.substitute(&map)
    }

    /// Sets the given symbols to zero and simplifies.
    pub fn at_zero(&self, syms: &[Symbol]) -> Expr {
        let map = syms.iter().map(|s| (s.clone(), Expr::zero())).collect();
        simplify(&self.substitute(&map))
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + match self {
            Expr::Const(_) | Expr::Sym(_) => 0,
            Expr::Add(v) | Expr::Mul(v) => v.iter().map(Expr::size).sum(),
            Expr::Pow(b, _) | Expr::Neg(b) | Expr::Sin(b) | Expr::Cos(b) => b.size(),
            Expr::Div(a, b) => a.size() + b.size(),
        }
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Expr {}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Structural total order. Constants compare with `f64::total_cmp`.
impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        use Expr::*;
        match (self, other) {
            (Const(a), Const(b)) => a.total_cmp(b),
            (Sym(a), Sym(b)) => a.cmp(b),
            (Add(a), Add(b)) | (Mul(a), Mul(b)) => a.cmp(b),
            (Pow(a, j), Pow(b, k)) => a.cmp(b).then(j.cmp(k)),
            (Neg(a), Neg(b)) | (Sin(a), Sin(b)) | (Cos(a), Cos(b)) => a.cmp(b),
            (Div(a, c), Div(b, d)) => a.cmp(b).then_with(|| c.cmp(d)),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl std::hash::Hash for Expr {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Expr::Const(c) => c.to_bits().hash(state),
            Expr::Sym(s) => s.hash(state),
            Expr::Add(v) | Expr::Mul(v) => v.hash(state),
            Expr::Pow(b, k) => {
                b.hash(state);
                k.hash(state);
            }
            Expr::Neg(b) | Expr::Sin(b) | Expr::Cos(b) => b.hash(state),
            Expr::Div(a, b) => {
                a.hash(state);
                b.hash(state);
            }
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::Const(c)
    }
}

impl From<&Symbol> for Expr {
    fn from(s: &Symbol) -> Self {
        Expr::Sym(s.clone())
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match self {
            Expr::Add(mut v) => {
                v.push(rhs);
                Expr::Add(v)
            }
            lhs => Expr::Add(vec![lhs, rhs]),
        }
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        self + (-rhs)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match self {
            Expr::Mul(mut v) => {
                v.push(rhs);
                Expr::Mul(v)
            }
            lhs => Expr::Mul(vec![lhs, rhs]),
        }
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// Sum of a list; the empty sum is zero.
pub fn sum(terms: Vec<Expr>) -> Expr {
    match terms.len() {
        0 => Expr::zero(),
        1 => terms.into_iter().next().unwrap(),
        _ => Expr::Add(terms),
    }
}

/// Product of a list; the empty product is one.
pub fn product(factors: Vec<Expr>) -> Expr {
    match factors.len() {
        0 => Expr::one(),
        1 => factors.into_iter().next().unwrap(),
        _ => Expr::Mul(factors),
    }
}

pub use diff::differentiate;
