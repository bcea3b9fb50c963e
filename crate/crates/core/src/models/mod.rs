//! Built-in systems: the unicycle with a lateral-velocity input together with
//! its hand-derived matrices, and small linear systems with known answers.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::expr::{differentiate, parse_expr, simplify, Expr};
use crate::lie::{ModelSpec, SystemModel};
use crate::matrix::ExprMatrix;
use crate::symbols::{Category, Symbol, SymbolTable};

mod rolling;

pub use rolling::rolling_constraint_residual;

const GOLDEN: &str = include_str!("../../fixtures/unicycle_golden.txt");

/// Direction making the extended unicycle decouplable: the extra input acts
/// as a lateral velocity.
pub const H_STAR: [&str; 3] = ["-sin(x)", "cos(x)", "0"];

/// Unicycle with heading `x`, sagittal speed `u1`, turn rate `u2` and an
/// extra input `w` entering along `h = (h1, h2, h3)`:
///
/// ```text
/// ẋ  = u2 + h3(x) w
/// y1 = (v_x, v_y) = (cos x, sin x) u1 + (h1(x), h2(x)) w
/// y2 = x
/// ```
pub fn unicycle(h: [&str; 3]) -> Result<SystemModel, ModelError> {
    ModelSpec {
        name: "unicycle",
        states: &["x"],
        inputs: &["u1", "u2"],
        extra: &["w"],
        g: &[&["0", "1"]],
        h: &[&[h[2]]],
        abar1: &[&["cos(x)", "0"], &["sin(x)", "0"]],
        bbar1: &[&[h[0]], &[h[1]]],
        h2: &["x"],
        operating_point: &[("u1", 1.0)],
        nonzero: &["u1"],
        angular: &[2],
        ..Default::default()
    }
    .build()
}

/// `[−sin x / u1, cos x / u1] · (h1, h2)`, simplified.
pub fn lambda_of(h: [&str; 3]) -> Result<Expr, ModelError> {
    let table = SymbolTable::with_groups(&["x"], &["u1"], &[])?;
    let h1 = parse_expr(h[0], &table)?;
    let h2 = parse_expr(h[1], &table)?;
    let x = Expr::sym("x");
    let u1 = Expr::sym("u1");
    Ok(simplify(&(-(x.clone().sin()) / u1.clone() * h1 + x.cos() / u1 * h2)))
}

/// Hand-derived unicycle matrices after the extension, specialized to a
/// direction `h`. Symbols are `x`, `u1` (now an integrator state), `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldenMatrices {
    pub a1: ExprMatrix,
    pub n1: ExprMatrix,
    pub n2: ExprMatrix,
    /// Drift of `ẏ1`.
    pub n: Vec<Expr>,
    pub b1: ExprMatrix,
    /// `Ā2 N1⁻¹`.
    pub q: ExprMatrix,
    pub lambda: Expr,
    /// `[[I + N2 N1⁻¹, B1], [Q, 0]]`.
    pub gamma: ExprMatrix,
}

/// Reads the committed fixture and substitutes the direction entries.
pub fn golden_matrices(h: [&str; 3]) -> Result<GoldenMatrices, ModelError> {
    let mut table = SymbolTable::new();
    for name in ["x", "u1", "u2", "w", "h1", "h2", "h3", "dh1", "dh2"] {
        table.declare(name, Category::State)?;
    }
    let mut entries = BTreeMap::new();
    for line in GOLDEN.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, body) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Dimension(format!("fixture line without `=`: {line}")))?;
        entries.insert(name.trim().to_string(), ExprMatrix::parse_literal(body, &table)?);
    }
    let x = Symbol::new("x");
    let parsed: Vec<Expr> = h.iter().map(|s| parse_expr(s, &table)).collect::<Result<_, _>>()?;
    let mut subs = BTreeMap::new();
    for (i, e) in parsed.iter().enumerate() {
        subs.insert(Symbol::new(&format!("h{}", i + 1)), e.clone());
    }
    subs.insert(Symbol::new("dh1"), simplify(&differentiate(&parsed[0], &x)));
    subs.insert(Symbol::new("dh2"), simplify(&differentiate(&parsed[1], &x)));
    let get = |name: &str| -> Result<ExprMatrix, ModelError> {
        entries
            .get(name)
            .map(|m| m.substitute(&subs).simplified())
            .ok_or_else(|| ModelError::Dimension(format!("fixture lacks `{name}`")))
    };
    let n1 = get("N1")?;
    let n2 = get("N2")?;
    let b1 = get("B1")?;
    let q = get("Q")?;
    let gamma = ExprMatrix::blocks(
        &ExprMatrix::identity(2).add(&n2.mul(&n1.inverse())),
        &b1,
        &q,
        &ExprMatrix::zeros(1, 1),
    );
    Ok(GoldenMatrices {
        a1: get("A1")?,
        n: get("n")?.col(0),
        lambda: get("lambda")?.get(0, 0).clone(),
        n1,
        n2,
        b1,
        q,
        gamma,
    })
}

/// A linear system with hand-derived relative degrees and decoupling matrix.
#[derive(Clone, Debug)]
pub struct OracleSystem {
    pub model: SystemModel,
    /// Relative degrees of `y1` with respect to `u`.
    pub r1: Vec<usize>,
    /// Differentiation orders of `y2` (first order where any input appears).
    pub r2: Vec<usize>,
    /// Composite decoupling matrix of the regular case.
    pub gamma: DMatrix<f64>,
}

/// Small linear systems used as case-1 oracles.
pub fn linear_oracle_suite() -> Vec<OracleSystem> {
    let build = |spec: ModelSpec| spec.build().expect("built-in oracle is well formed");
    vec![
        OracleSystem {
            model: build(ModelSpec {
                name: "double_integrator",
                states: &["x1", "x2"],
                inputs: &["u"],
                f: &["x2", "0"],
                g: &[&["0"], &["1"]],
                h1: &["x1"],
                ..Default::default()
            }),
            r1: vec![2],
            r2: vec![],
            gamma: DMatrix::identity(1, 1),
        },
        OracleSystem {
            model: build(ModelSpec {
                name: "chain",
                states: &["x1", "x2"],
                inputs: &["u"],
                extra: &["w"],
                f: &["x2", "0"],
                g: &[&["0"], &["1"]],
                h: &[&["1"], &["0"]],
                h1: &["x2"],
                h2: &["x1 - x2"],
                ..Default::default()
            }),
            r1: vec![1],
            r2: vec![1],
            gamma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 1.0]),
        },
        OracleSystem {
            model: build(ModelSpec {
                name: "feedthrough",
                states: &["x"],
                inputs: &["u"],
                extra: &["w"],
                f: &["-x"],
                g: &[&["1"]],
                h: &[&["1"]],
                h1: &["x"],
                abar1: &[&["2"]],
                h2: &["x"],
                ..Default::default()
            }),
            r1: vec![0],
            r2: vec![1],
            gamma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]),
        },
        OracleSystem {
            model: build(ModelSpec {
                name: "two_channel",
                states: &["x1", "x2", "x3", "x4"],
                inputs: &["u1", "u2"],
                extra: &["w"],
                f: &["x2", "0", "0", "x1"],
                g: &[&["0", "0"], &["1", "0"], &["0", "1"], &["0", "0"]],
                h: &[&["0"], &["0"], &["0"], &["1"]],
                h1: &["x2", "x3"],
                h2: &["x4 + x2"],
                ..Default::default()
            }),
            r1: vec![1, 1],
            r2: vec![1],
            gamma: DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
        },
    ]
}

/// Random linear system `ẋ = A x + B u + E w`, `y1 = C1 x`, `y2 = C2 x` with
/// four states, two inputs and one extra input, integer coefficients and
/// `C1 B` invertible, so `y1` has relative degree one. When `degenerate`
/// is set, `E` lies in the range of `B` and the extra input cannot help.
pub fn random_linear_case1(seed: u64, degenerate: bool) -> SystemModel {
    const N: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-3i32..=3) as f64);
    loop {
        let a = draw(N, N);
        let b = draw(N, 2);
        let c1 = draw(2, N);
        let c2 = draw(1, N);
        let e = if degenerate { &b * draw(2, 1) } else { draw(N, 1) };
        if (&c1 * &b).determinant().abs() < 0.5 || (&c2 * &b).iter().all(|v| *v == 0.0) {
            continue;
        }
        let states = ["x1", "x2", "x3", "x4"];
        let lin = |m: &DMatrix<f64>, row: usize, syms: &[&str]| -> String {
            let terms: Vec<String> = syms
                .iter()
                .enumerate()
                .filter(|(j, _)| m[(row, *j)] != 0.0)
                .map(|(j, s)| format!("({})*{s}", m[(row, j)]))
                .collect();
            if terms.is_empty() { "0".to_string() } else { terms.join(" + ") }
        };
        let cell = |m: &DMatrix<f64>| -> Vec<Vec<String>> {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| format!("({})", m[(i, j)])).collect()).collect()
        };
        let f: Vec<String> = (0..N).map(|i| lin(&a, i, &states)).collect();
        let h1: Vec<String> = (0..2).map(|i| lin(&c1, i, &states)).collect();
        let h2 = vec![lin(&c2, 0, &states)];
        let (g, h) = (cell(&b), cell(&e));
        fn refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        let f = refs(&f);
        let h1 = refs(&h1);
        let h2 = refs(&h2);
        let g_rows: Vec<Vec<&str>> = g.iter().map(|r| refs(r)).collect();
        let h_rows: Vec<Vec<&str>> = h.iter().map(|r| refs(r)).collect();
        let g_rows: Vec<&[&str]> = g_rows.iter().map(Vec::as_slice).collect();
        let h_rows: Vec<&[&str]> = h_rows.iter().map(Vec::as_slice).collect();
        let name = format!("random_linear_{seed}");
        return ModelSpec {
            name: &name,
            states: &states,
            inputs: &["u1", "u2"],
            extra: &["w"],
            f: &f,
            g: &g_rows,
            h: &h_rows,
            h1: &h1,
            h2: &h2,
            ..Default::default()
        }
        .build()
        .expect("generated system is well formed");
    }
}
