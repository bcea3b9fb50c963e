//! Property tests over a generated expression corpus: derivatives against
//! central differences, simplification soundness and idempotence, and
//! printer/parser round trips.

use ioext_core::expr::{differentiate, parse_expr, simplify, Assignment, Expr};
use ioext_core::symbols::{Symbol, SymbolTable};
use proptest::prelude::*;

const NAMES: [&str; 3] = ["x1", "x2", "x3"];

fn table() -> SymbolTable {
    SymbolTable::with_groups(&NAMES, &[], &[]).unwrap()
}

/// Expressions that are finite everywhere: every denominator is `c + b^2`
/// with `c >= 0.5`.
fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3i32..=3).prop_map(|k| Expr::Const(k as f64)),
        (-20i32..=20).prop_map(|k| Expr::Const(k as f64 / 8.0)),
        prop::sample::select(NAMES.to_vec()).prop_map(Expr::sym),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Add),
            prop::collection::vec(inner.clone(), 2..3).prop_map(Expr::Mul),
            inner.clone().prop_map(|e| -e),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            (inner.clone(), 1i32..=3).prop_map(|(e, k)| e.powi(k)),
            (inner.clone(), inner.clone(), 1u8..4).prop_map(|(a, b, c)| {
                a / (Expr::Const(c as f64 / 2.0) + b.powi(2))
            }),
            (inner.clone(), 1i32..=2).prop_map(|(b, k)| (Expr::one() + b.powi(2)).powi(-k)),
        ]
    })
}

fn point(vals: &[f64]) -> Assignment {
    NAMES.iter().zip(vals).map(|(n, v)| (Symbol::new(n), *v)).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn derivative_matches_central_differences(
        e in arb_expr(),
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 50),
        which in 0usize..3,
    ) {
        let s = Symbol::new(NAMES[which]);
        let d = simplify(&differentiate(&e, &s));
        let h = 1e-6;
        for p in &pts {
            let f = |dx: f64| {
                let mut q = p.clone();
                q[which] += dx;
                e.eval(&point(&q)).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let sym = d.eval(&point(p)).unwrap();
            // Roundoff in the difference quotient scales with |f|/h.
            let scale = f(0.0).abs().max(1.0);
            prop_assert!((fd - sym).abs() <= 1e-5 * sym.abs().max(scale),
                "d/d{} of {} at {:?}: fd {} vs {} ({})", NAMES[which], e, p, fd, sym, d);
        }
    }

    #[test]
    fn simplify_preserves_value(
        e in arb_expr(),
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 20),
    ) {
        let s = simplify(&e);
        for p in &pts {
            let a = e.eval(&point(p)).unwrap();
            let b = s.eval(&point(p)).unwrap();
            prop_assert!(close(a, b, 1e-9), "{} -> {} at {:?}: {} vs {}", e, s, p, a, b);
        }
    }

    #[test]
    fn simplify_is_idempotent(e in arb_expr()) {
        let once = simplify(&e);
        prop_assert_eq!(simplify(&once), once);
    }

    #[test]
    fn derivative_of_absent_symbol_is_zero(e in arb_expr()) {
        let stray = Symbol::new("q");
        prop_assert!(simplify(&differentiate(&e, &stray)).is_zero());
    }

    #[test]
    fn print_then_parse_round_trips(
        e in arb_expr(),
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 10),
    ) {
        let back = parse_expr(&e.to_string(), &table()).unwrap();
        for p in &pts {
            let a = e.eval(&point(p)).unwrap();
            let b = back.eval(&point(p)).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits(), "{}", e);
        }
    }
}
