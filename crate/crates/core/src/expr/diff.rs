use super::{product, sum, Expr};
use crate::symbols::Symbol;

/// Partial derivative of `e` with respect to `s`. The result is not
/// simplified; subtrees free of `s` differentiate to a literal zero.
pub fn differentiate(e: &Expr, s: &Symbol) -> Expr {
    if !e.contains(s) {
        return Expr::zero();
    }
    match e {
        Expr::Const(_) => Expr::zero(),
        Expr::Sym(x) => Expr::Const(if x == s { 1.0 } else { 0.0 }),
        Expr::Add(terms) => sum(terms
            .iter()
            .filter(|t| t.contains(s))
            .map(|t| differentiate(t, s))
            .collect()),
        Expr::Mul(factors) => {
            let mut terms = Vec::new();
            for (i, fi) in factors.iter().enumerate() {
                if !fi.contains(s) {
                    continue;
                }
                let mut prod: Vec<Expr> = factors.clone();
                prod[i] = differentiate(fi, s);
                terms.push(product(prod));
            }
            sum(terms)
        }
        Expr::Pow(b, k) => {
            let k = *k;
            product(vec![Expr::Const(k as f64), b.as_ref().clone().powi(k - 1), differentiate(b, s)])
        }
        Expr::Neg(a) => -differentiate(a, s),
        Expr::Div(a, b) => {
            let (a, b) = (a.as_ref(), b.as_ref());
            let num = differentiate(a, s) * b.clone() - a.clone() * differentiate(b, s);
            num / b.clone().powi(2)
        }
        Expr::Sin(a) => a.as_ref().clone().cos() * differentiate(a, s),
        Expr::Cos(a) => -(a.as_ref().clone().sin() * differentiate(a, s)),
    }
}
