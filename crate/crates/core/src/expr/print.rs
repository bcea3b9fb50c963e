use std::fmt;

use super::Expr;

// Binding strength, loosest first.
const ADD: u8 = 1;
const MUL: u8 = 2;
const UNARY: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) if c.is_sign_negative() => UNARY,
        Expr::Const(_) | Expr::Sym(_) | Expr::Sin(_) | Expr::Cos(_) => ATOM,
        Expr::Add(_) => ADD,
        Expr::Mul(_) | Expr::Div(..) => MUL,
        Expr::Neg(_) => UNARY,
        Expr::Pow(..) => POW,
    }
}

fn wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Add(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    match t {
                        Expr::Neg(inner) if i > 0 => {
                            f.write_str(" - ")?;
                            wrapped(f, inner, prec(inner) <= ADD)?;
                        }
                        _ => {
                            if i > 0 {
                                f.write_str(" + ")?;
                            }
                            wrapped(f, t, prec(t) <= ADD)?;
                        }
                    }
                }
                Ok(())
            }
            Expr::Mul(factors) => {
                for (i, t) in factors.iter().enumerate() {
                    if i > 0 {
                        f.write_str("*")?;
                    }
                    let parens = match t {
                        Expr::Mul(_) => true,
                        Expr::Div(..) => i > 0,
                        _ => prec(t) < MUL,
                    };
                    wrapped(f, t, parens)?;
                }
                Ok(())
            }
            Expr::Div(a, b) => {
                wrapped(f, a, prec(a) < MUL)?;
                f.write_str("/")?;
                wrapped(f, b, prec(b) <= MUL)
            }
            Expr::Neg(a) => {
                f.write_str("-")?;
                wrapped(f, a, prec(a) < UNARY)
            }
            Expr::Pow(b, k) => {
                wrapped(f, b, prec(b) < ATOM)?;
                write!(f, "^{k}")
            }
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expr;
    use super::*;
    use crate::symbols::SymbolTable;

    fn table() -> SymbolTable {
        SymbolTable::with_groups(&["x", "y"], &["u1"], &[]).unwrap()
    }

    #[test]
    fn prints_in_grammar() {
        let t = table();
        for src in [
            "cos(x)/u1",
            "-sin(x)/u1",
            "x + y*u1 - sin(x)",
            "(x + y)^2",
            "x*(y/u1)",
            "x/(y*u1)",
            "(x*y)*u1",
            "-(x + y)",
            "x^-3",
            "(-x)^2",
            "x - (y - u1)",
            "(x + y) + u1",
            "0.001*x",
        ] {
            let e = parse_expr(src, &t).unwrap();
            assert_eq!(e.to_string(), src);
            assert_eq!(parse_expr(&e.to_string(), &t).unwrap(), e, "{src}");
        }
    }

    #[test]
    fn negative_constants_stay_parseable() {
        let e = Expr::Mul(vec![Expr::sym("x"), Expr::Const(-2.0)]);
        assert_eq!(e.to_string(), "x*-2");
        let back = parse_expr(&e.to_string(), &table()).unwrap();
        assert_eq!(back.to_string(), "x*-2");
        let p = Expr::Pow(Box::new(Expr::Const(-2.0)), 2);
        assert_eq!(p.to_string(), "(-2)^2");
    }
}
