//! Rewriting to a sum-of-monomials normal form.
//!
//! Every expression is mapped to a polynomial whose monomials are products of
//! atomic bases raised to integer powers: symbols, `sin`/`cos` of a
//! normalised argument, and (for negative powers only) a normalised sum with
//! unit leading coefficient and no common monomial factor. Positive powers of
//! sums are expanded, like terms are combined, and `c*R*sin(a)^2 + c*R*cos(a)^2`
//! collapses to `c*R`. The pass is not a canonicaliser; it guarantees constant
//! folding, the 0/1 identities, the Pythagorean collapse, and idempotence.

use std::collections::BTreeMap;

use super::{product, sum, Expr};

type Factors = BTreeMap<Expr, i32>;

#[derive(Clone, Debug, Default, PartialEq)]
struct Poly {
    terms: BTreeMap<Factors, f64>,
}

/// Simplified form of `e`; evaluates equal to `e` wherever `e` is defined.
pub fn simplify(e: &Expr) -> Expr {
    to_expr(&normalize(e))
}

impl Poly {
    fn constant(c: f64) -> Poly {
        let mut p = Poly::default();
        p.add_term(Factors::new(), c);
        p
    }

    fn monomial(base: Expr, k: i32) -> Poly {
        let mut f = Factors::new();
        f.insert(base, k);
        let mut p = Poly::default();
        p.terms.insert(f, 1.0);
        p
    }

    fn add_term(&mut self, f: Factors, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(f);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let v = *o.get() + c;
                if v == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn as_const(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (f, c) = self.terms.iter().next().unwrap();
                f.is_empty().then_some(*c)
            }
            _ => None,
        }
    }

    fn single(&self) -> Option<(Factors, f64)> {
        (self.terms.len() == 1).then(|| {
            let (f, c) = self.terms.iter().next().unwrap();
            (f.clone(), *c)
        })
    }

    fn scale(&self, s: f64) -> Poly {
        let mut p = Poly::default();
        for (f, c) in &self.terms {
            p.add_term(f.clone(), c * s);
        }
        p
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut p = self.clone();
        for (f, c) in &other.terms {
            p.add_term(f.clone(), *c);
        }
        p
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut p = Poly::default();
        for (fa, ca) in &self.terms {
            for (fb, cb) in &other.terms {
                p.add_term(merge(fa, fb, 1), ca * cb);
            }
        }
        p
    }

    fn leading_coeff(&self) -> f64 {
        self.terms.values().next().copied().unwrap_or(0.0)
    }
}

/// `a * b^sign` on exponent maps.
fn merge(a: &Factors, b: &Factors, sign: i32) -> Factors {
    let mut out = a.clone();
    for (base, k) in b {
        let e = out.entry(base.clone()).or_insert(0);
        *e += sign * k;
        if *e == 0 {
            out.remove(base);
        }
    }
    out
}

fn normalize(e: &Expr) -> Poly {
    match e {
        Expr::Const(c) => Poly::constant(*c),
        Expr::Sym(_) => Poly::monomial(e.clone(), 1),
        Expr::Add(v) => {
            let mut p = Poly::default();
            for t in v {
                p = p.add(&normalize(t));
            }
            pythagoras(p)
        }
        Expr::Neg(a) => normalize(a).scale(-1.0),
        Expr::Mul(v) => pythagoras(mul_all(v.iter().map(normalize).collect())),
        Expr::Div(a, b) => pythagoras(mul_all(vec![normalize(a), normalize_pow(b, -1)])),
        Expr::Pow(b, k) => pythagoras(normalize_pow(b, *k)),
        Expr::Sin(a) => trig(a, true),
        Expr::Cos(a) => trig(a, false),
    }
}

/// `normalize(e)^k`, distributing the power over products and quotients
/// before anything is expanded.
fn normalize_pow(e: &Expr, k: i32) -> Poly {
    match e {
        Expr::Pow(b, j) => normalize_pow(b, j * k),
        Expr::Mul(v) => mul_all(v.iter().map(|f| normalize_pow(f, k)).collect()),
        Expr::Div(a, b) => mul_all(vec![normalize_pow(a, k), normalize_pow(b, -k)]),
        Expr::Neg(a) => normalize_pow(a, k).scale(if k % 2 == 0 { 1.0 } else { -1.0 }),
        _ if k == -1 => invert(normalize(e)),
        _ => power(normalize(e), k),
    }
}

fn trig(arg: &Expr, is_sin: bool) -> Poly {
    let p = normalize(arg);
    if let Some(c) = p.as_const() {
        return Poly::constant(if is_sin { c.sin() } else { c.cos() });
    }
    let flip = p.leading_coeff() < 0.0;
    let arg = to_expr(&if flip { p.scale(-1.0) } else { p });
    if is_sin {
        Poly::monomial(arg.sin(), 1).scale(if flip { -1.0 } else { 1.0 })
    } else {
        Poly::monomial(arg.cos(), 1)
    }
}

/// A multi-term polynomial written as `c0 * g * R`.
enum Split {
    Monomial(Factors, f64),
    Factored { c0: f64, common: Factors, rest: Poly },
}

fn split(p: &Poly) -> Split {
    if let Some((f, c)) = p.single() {
        return Split::Monomial(f, c);
    }
    let mut common = Factors::new();
    let mut terms = p.terms.keys();
    if let Some(first) = terms.next() {
        'bases: for (base, &k0) in first {
            let mut k = k0;
            for f in p.terms.keys().skip(1) {
                match f.get(base) {
                    Some(&kj) if kj.signum() == k0.signum() => {
                        k = if k0 > 0 { k.min(kj) } else { k.max(kj) };
                    }
                    _ => continue 'bases,
                }
            }
            common.insert(base.clone(), k);
        }
    }
    let mut rest = Poly::default();
    for (f, c) in &p.terms {
        rest.add_term(merge(f, &common, -1), *c);
    }
    let c0 = rest.leading_coeff();
    let rest = pythagoras(rest.scale(1.0 / c0));
    if let Some((f, c)) = rest.single() {
        return Split::Monomial(merge(&f, &common, 1), c * c0);
    }
    Split::Factored { c0, common, rest }
}

/// Builds the polynomial of `c * prod(f)`, expanding any sum base that ended
/// up with a positive exponent.
fn from_monomial(f: Factors, c: f64) -> Poly {
    let mut kept = Factors::new();
    let mut expand = Vec::new();
    for (base, k) in f {
        if k > 0 && matches!(base, Expr::Add(_)) {
            expand.push((base, k));
        } else {
            kept.insert(base, k);
        }
    }
    let mut p = Poly::default();
    p.terms.insert(kept, c);
    if c == 0.0 {
        return Poly::default();
    }
    for (base, k) in expand {
        let b = normalize(&base);
        for _ in 0..k {
            p = p.mul(&b);
        }
    }
    p
}

fn power(p: Poly, k: i32) -> Poly {
    if k == 0 {
        return Poly::constant(1.0);
    }
    if let Some(c) = p.as_const() {
        if c == 0.0 && k < 0 {
            return Poly::monomial(Expr::Const(0.0), k);
        }
        return Poly::constant(c.powi(k));
    }
    if let Some((f, c)) = p.single() {
        let f = f.into_iter().map(|(b, e)| (b, e * k)).collect();
        return from_monomial(f, c.powi(k));
    }
    if k > 0 {
        let mut out = Poly::constant(1.0);
        for _ in 0..k {
            out = out.mul(&p);
        }
        return out;
    }
    match split(&p) {
        Split::Monomial(f, c) => power(
            {
                let mut q = Poly::default();
                q.terms.insert(f, c);
                q
            },
            k,
        ),
        Split::Factored { c0, common, rest } => {
            let mut f: Factors = common.into_iter().map(|(b, e)| (b, e * k)).collect();
            f = merge(&f, &Factors::from([(to_expr(&rest), k)]), 1);
            from_monomial(f, c0.powi(k))
        }
    }
}

fn invert(p: Poly) -> Poly {
    if p.is_zero() {
        return Poly::monomial(Expr::Const(0.0), -1);
    }
    power(p, -1)
}

fn mul_all(polys: Vec<Poly>) -> Poly {
    let mut mono = Factors::new();
    let mut coeff = 1.0;
    let mut sums = Vec::new();
    for p in polys {
        if p.is_zero() {
            return Poly::default();
        }
        match p.single() {
            Some((f, c)) => {
                mono = merge(&mono, &f, 1);
                coeff *= c;
            }
            None => sums.push(p),
        }
    }
    let mut expand = Vec::new();
    for s in sums {
        match split(&s) {
            Split::Monomial(f, c) => {
                mono = merge(&mono, &f, 1);
                coeff *= c;
            }
            Split::Factored { c0, common, rest } => {
                let key = to_expr(&rest);
                if mono.get(&key).is_some_and(|&k| k < 0) {
                    mono = merge(&mono, &common, 1);
                    mono = merge(&mono, &Factors::from([(key, 1)]), 1);
                    coeff *= c0;
                } else {
                    expand.push(s);
                }
            }
        }
    }
    let mut out = from_monomial(mono, coeff);
    for s in expand {
        out = out.mul(&s);
    }
    out
}

/// Collapses `c*R*sin(a)^2 + c*R*cos(a)^2` to `c*R` until no pair remains.
fn pythagoras(mut p: Poly) -> Poly {
    loop {
        let mut hit = None;
        'search: for (f, c) in &p.terms {
            for (base, &k) in f {
                let Expr::Sin(arg) = base else { continue };
                if k < 2 {
                    continue;
                }
                let rest = merge(f, &Factors::from([(base.clone(), 2)]), -1);
                let partner = merge(&rest, &Factors::from([(arg.as_ref().clone().cos(), 2)]), 1);
                if p.terms.get(&partner) == Some(c) {
                    hit = Some((f.clone(), partner, rest, *c));
                    break 'search;
                }
            }
        }
        let Some((a, b, rest, c)) = hit else { return p };
        p.terms.remove(&a);
        p.terms.remove(&b);
        p.add_term(rest, c);
    }
}

fn to_expr(p: &Poly) -> Expr {
    if p.is_zero() {
        return Expr::zero();
    }
    sum(p.terms.iter().map(|(f, c)| term_expr(f, *c)).collect())
}

fn term_expr(f: &Factors, c: f64) -> Expr {
    let mag = c.abs();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for (base, &k) in f {
        let (list, k) = if k > 0 { (&mut num, k) } else { (&mut den, -k) };
        list.push(if k == 1 { base.clone() } else { base.clone().powi(k) });
    }
    if mag != 1.0 || num.is_empty() {
        num.insert(0, Expr::Const(mag));
    }
    let mut e = product(num);
    if !den.is_empty() {
        e = e / product(den);
    }
    if c < 0.0 {
        -e
    } else {
        e
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expr;
    use super::*;
    use crate::symbols::SymbolTable;

    fn t() -> SymbolTable {
        SymbolTable::with_groups(&["x1", "x2", "x"], &["u1", "u2"], &["w"]).unwrap()
    }

    fn s(src: &str) -> String {
        simplify(&parse_expr(src, &t()).unwrap()).to_string()
    }

    #[test]
    fn pythagorean_identity() {
        assert_eq!(s("sin(x1)^2 + cos(x1)^2"), "1");
        assert_eq!(s("(-sin(x1))*(-sin(x1)) + cos(x1)*cos(x1)"), "1");
        assert_eq!(s("u1*cos(x)^2 + u1*sin(x)^2"), "u1");
        assert_eq!(s("3*w*sin(x)^2/u1 + 3*cos(x)^2*w/u1 - 1"), "-1 + 3*w/u1");
    }

    #[test]
    fn zero_and_one_identities() {
        assert_eq!(s("0*u1 + x2"), "x2");
        assert_eq!(s("1*x2*1 + 0"), "x2");
        assert_eq!(s("x2^0"), "1");
        assert_eq!(s("x2 - x2"), "0");
        assert_eq!(s("2*3 + 4"), "10");
    }

    #[test]
    fn quotients_reduce() {
        assert_eq!(s("(-sin(x))*(-sin(x))/u1 + cos(x)*cos(x)/u1"), "1/u1");
        assert_eq!(s("-sin(x)*cos(x)/u1 + cos(x)*sin(x)/u1"), "0");
        assert_eq!(s("(u1*cos(x))/(u1*cos(x)^2 + u1*sin(x)^2)"), "cos(x)");
        assert_eq!(s("(x1 + x2)/(x1 + x2)"), "1");
        assert_eq!(s("(2*x1 + 2*x2)*(x1 + x2)^-2"), "2/(x1 + x2)");
    }

    #[test]
    fn trig_sign_canonicalisation() {
        assert_eq!(s("sin(-x) + sin(x)"), "0");
        assert_eq!(s("cos(-x) - cos(x)"), "0");
        assert_eq!(s("sin(0)"), "0");
        assert_eq!(s("cos(0)"), "1");
    }

    #[test]
    fn division_by_literal_zero_survives() {
        let e = simplify(&parse_expr("x1/0", &t()).unwrap());
        assert_eq!(e.to_string(), "x1/0");
        assert_eq!(simplify(&e), e);
    }

    #[test]
    fn expansion_is_idempotent() {
        for src in [
            "(x1 + x2)^3*sin(x1 - x2)",
            "1/(x1 + x2)^2 - x1/(x2 + x1)",
            "cos(x)^2/(u1 + u2*sin(x))",
            "(x1/(x1 + 1))^-2",
        ] {
            let once = simplify(&parse_expr(src, &t()).unwrap());
            assert_eq!(simplify(&once), once, "{src}");
        }
    }
}
