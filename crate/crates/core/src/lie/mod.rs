//! Lie derivatives, the extended decoupling matrix with direct feedthrough,
//! and vector relative degree.

mod model;

use serde::Serialize;

use crate::error::AnalysisError;
use crate::expr::{differentiate, simplify, sum, Assignment, Expr};
use crate::matrix::{numeric_rank, relative_det, ExprMatrix};
use crate::ode::{central_difference, rk4_step};
use crate::sampling::{identically_zero, perturbed_points, PointSampler};
use crate::symbols::Symbol;

pub use model::{Block, ModelDoc, ModelSpec, SymbolDoc, SystemModel, Wrt};

/// Relative tolerance on singular values for numeric rank.
pub const RANK_TOL: f64 = 1e-9;
/// Threshold on `|det| / prod(row norms)` for nonsingularity.
pub const DET_TOL: f64 = 1e-9;

/// `Σ_i ∂h/∂x_i · field_i`, simplified.
pub fn lie_derivative(h: &Expr, field: &[Expr], state: &[Symbol]) -> Expr {
    assert_eq!(field.len(), state.len(), "field length differs from state dimension");
    let terms = state
        .iter()
        .zip(field)
        .filter(|(s, v)| !v.is_zero() && h.contains(s))
        .map(|(s, v)| differentiate(h, s) * v.clone())
        .collect();
    simplify(&sum(terms))
}

/// `L_f^k h`; `k = 0` returns `h` unchanged.
pub fn iterated_lie(h: &Expr, f: &[Expr], state: &[Symbol], k: usize) -> Expr {
    let mut e = h.clone();
    for _ in 0..k {
        e = lie_derivative(&e, f, state);
    }
    e
}

/// Row `[L_{m_1} h, …, L_{m_k} h]` over the columns of `m`.
pub fn lie_along_columns(h: &Expr, m: &ExprMatrix, state: &[Symbol]) -> Vec<Expr> {
    (0..m.ncols()).map(|j| lie_derivative(h, &m.col(j), state)).collect()
}

/// The `k`-th time derivative of one output row, split into drift, input and
/// extra-input parts: `y_i^(k) = drift + u_row·u + w_row·w`.
///
/// Valid when no input appears in lower derivatives of that row, which is the
/// situation at and below the relative degree.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputDerivative {
    pub drift: Expr,
    pub u_row: Vec<Expr>,
    pub w_row: Vec<Expr>,
}

/// Lazily extends `η_i, L_f η_i, L_f² η_i, …` for one output row.
struct DriftChain<'a> {
    model: &'a SystemModel,
    chain: Vec<Expr>,
}

impl<'a> DriftChain<'a> {
    fn new(model: &'a SystemModel, eta: &Expr) -> Self {
        DriftChain { model, chain: vec![simplify(eta)] }
    }

    fn get(&mut self, k: usize) -> &Expr {
        while self.chain.len() <= k {
            let last = self.chain.last().expect("chain starts nonempty");
            let next = lie_derivative(last, &self.model.f, &self.model.state);
            self.chain.push(next);
        }
        &self.chain[k]
    }

    fn derivative(&mut self, row: usize, abar: &ExprMatrix, bbar: &ExprMatrix, k: usize) -> OutputDerivative {
        if k == 0 {
            return OutputDerivative {
                drift: self.get(0).clone(),
                u_row: abar.row(row).to_vec(),
                w_row: bbar.row(row).to_vec(),
            };
        }
        let prev = self.get(k - 1).clone();
        OutputDerivative {
            drift: self.get(k).clone(),
            u_row: lie_along_columns(&prev, &self.model.g, &self.model.state),
            w_row: lie_along_columns(&prev, &self.model.h, &self.model.state),
        }
    }
}

/// Derivative of order `k` of row `row` in `block`.
pub fn output_derivative(system: &SystemModel, block: Block, row: usize, k: usize) -> OutputDerivative {
    let (eta, abar, bbar) = system.block(block);
    DriftChain::new(system, &eta[row]).derivative(row, abar, bbar, k)
}

/// Extended decoupling matrix: row `i` is `L_G L_f^{r_i - 1} η_i` when
/// `r_i >= 1` and the feedthrough row `Ā_i` when `r_i = 0` (with `H`, `B̄`
/// for `wrt = W`).
pub fn extended_decoupling(system: &SystemModel, block: Block, r: &[usize], wrt: Wrt) -> ExprMatrix {
    let (eta, _, _) = system.block(block);
    assert_eq!(r.len(), eta.len(), "one relative degree per output row");
    let rows = r
        .iter()
        .enumerate()
        .map(|(i, &ri)| {
            let d = output_derivative(system, block, i, ri);
            match wrt {
                Wrt::U => d.u_row,
                Wrt::W => d.w_row,
            }
        })
        .collect();
    let cols = match wrt {
        Wrt::U => system.m1(),
        Wrt::W => system.m2(),
    };
    ExprMatrix::from_rows(rows, cols).expect("rows have the input dimension")
}

/// Result of [`vector_relative_degree`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeDegreeReport {
    pub block: Block,
    pub wrt: Wrt,
    /// Per-row order at which the chosen input first appears.
    pub r: Vec<usize>,
    /// Per-row order at which the other input first appears, if it does up to
    /// the differentiation bound.
    pub r_other: Vec<Option<usize>>,
    /// Decoupling matrix with respect to the chosen input, rows at `r`.
    #[serde(serialize_with = "ser_matrix")]
    pub a: ExprMatrix,
    /// Coefficient of the other input in the same derivatives.
    #[serde(serialize_with = "ser_matrix")]
    pub b: ExprMatrix,
    /// Drift of the derivatives at `r`.
    #[serde(serialize_with = "ser_vec")]
    pub p: Vec<Expr>,
    /// Full rank at the operating point and at every perturbation.
    pub regular: bool,
    pub rank_at_op: usize,
    /// `|det A(x°)| / prod(row norms)` when `A` is square.
    pub relative_det_at_op: Option<f64>,
    /// Columns of `A` that vanish identically.
    pub zero_columns: Vec<usize>,
}

pub(crate) fn ser_matrix<S: serde::Serializer>(m: &ExprMatrix, s: S) -> Result<S::Ok, S::Error> {
    m.to_strings().serialize(s)
}

pub(crate) fn ser_vec<S: serde::Serializer>(v: &[Expr], s: S) -> Result<S::Ok, S::Error> {
    v.iter().map(|e| e.to_string()).collect::<Vec<_>>().serialize(s)
}

/// Default differentiation bound `n + 1`.
pub fn default_max_order(system: &SystemModel) -> usize {
    system.n() + 1
}

/// Per-row relative degree with the identically-zero test of
/// [`identically_zero`], plus regularity certified at the operating point and
/// its perturbations.
pub fn vector_relative_degree(
    system: &SystemModel,
    block: Block,
    wrt: Wrt,
    max_order: usize,
) -> Result<RelativeDegreeReport, AnalysisError> {
    let (eta, abar, bbar) = system.block(block);
    if eta.is_empty() {
        return Err(AnalysisError::EmptyBlock(block.index()));
    }
    let mut sampler = PointSampler::new(system.sample_symbols(), &system.nonzero);
    let mut r = Vec::with_capacity(eta.len());
    let mut r_other = Vec::with_capacity(eta.len());
    let mut a_rows = Vec::new();
    let mut b_rows = Vec::new();
    let mut p = Vec::new();
    for (i, e) in eta.iter().enumerate() {
        let mut chain = DriftChain::new(system, e);
        let mut found = None;
        let mut other = None;
        for k in 0..=max_order {
            let d = chain.derivative(i, abar, bbar, k);
            let (mine, theirs) = match wrt {
                Wrt::U => (&d.u_row, &d.w_row),
                Wrt::W => (&d.w_row, &d.u_row),
            };
            if other.is_none() && !identically_zero(theirs, &mut sampler) {
                other = Some(k);
            }
            if !identically_zero(mine, &mut sampler) {
                found = Some((k, d));
                break;
            }
        }
        let Some((k, d)) = found else {
            return Err(AnalysisError::MaxOrderExceeded { output: i, max_order });
        };
        if other.is_none() {
            // Keep looking for the other input past the chosen order.
            for kk in k + 1..=max_order {
                let dd = chain.derivative(i, abar, bbar, kk);
                let t = match wrt {
                    Wrt::U => &dd.w_row,
                    Wrt::W => &dd.u_row,
                };
                if !identically_zero(t, &mut sampler) {
                    other = Some(kk);
                    break;
                }
            }
        }
        r.push(k);
        r_other.push(other);
        let (mine, theirs) = match wrt {
            Wrt::U => (d.u_row, d.w_row),
            Wrt::W => (d.w_row, d.u_row),
        };
        a_rows.push(mine.iter().map(simplify).collect::<Vec<_>>());
        b_rows.push(theirs.iter().map(simplify).collect::<Vec<_>>());
        p.push(d.drift);
    }
    let (ca, cb) = match wrt {
        Wrt::U => (system.m1(), system.m2()),
        Wrt::W => (system.m2(), system.m1()),
    };
    let a = ExprMatrix::from_rows(a_rows, ca).expect("rows have the input dimension");
    let b = ExprMatrix::from_rows(b_rows, cb).expect("rows have the input dimension");

    let zero_columns = (0..a.ncols())
        .filter(|&j| identically_zero(&a.col(j), &mut sampler))
        .collect();
    let cert = certify_rank(&a, &system.operating_assignment());
    Ok(RelativeDegreeReport {
        block,
        wrt,
        r,
        r_other,
        regular: cert.full_rank_everywhere,
        rank_at_op: cert.rank_at_op,
        relative_det_at_op: cert.relative_det_at_op,
        a,
        b,
        p,
        zero_columns,
    })
}

/// Each row of a block expanded up to the first order at which any input
/// (from `u` or `w`) appears.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockExpansion {
    pub orders: Vec<usize>,
    /// `η_i, L_f η_i, …` below `orders[i]`; inputs do not appear there.
    pub lower: Vec<Vec<Expr>>,
    pub drift: Vec<Expr>,
    pub u_rows: ExprMatrix,
    pub w_rows: ExprMatrix,
}

/// Expands every row of `block` to its first input-carrying derivative.
pub fn expand_block(system: &SystemModel, block: Block, max_order: usize) -> Result<BlockExpansion, AnalysisError> {
    let (eta, abar, bbar) = system.block(block);
    let mut sampler = PointSampler::new(system.sample_symbols(), &system.nonzero);
    let mut out = BlockExpansion {
        orders: Vec::new(),
        lower: Vec::new(),
        drift: Vec::new(),
        u_rows: ExprMatrix::zeros(0, system.m1()),
        w_rows: ExprMatrix::zeros(0, system.m2()),
    };
    let mut u_rows = Vec::new();
    let mut w_rows = Vec::new();
    for (i, e) in eta.iter().enumerate() {
        let mut chain = DriftChain::new(system, e);
        let mut found = None;
        for k in 0..=max_order {
            let d = chain.derivative(i, abar, bbar, k);
            if !identically_zero(&d.u_row, &mut sampler) || !identically_zero(&d.w_row, &mut sampler) {
                found = Some((k, d));
                break;
            }
        }
        let Some((k, d)) = found else {
            return Err(AnalysisError::MaxOrderExceeded { output: i, max_order });
        };
        out.orders.push(k);
        out.lower.push((0..k).map(|j| chain.get(j).clone()).collect());
        out.drift.push(d.drift);
        u_rows.push(d.u_row.iter().map(simplify).collect());
        w_rows.push(d.w_row.iter().map(simplify).collect());
    }
    out.u_rows = ExprMatrix::from_rows(u_rows, system.m1()).expect("rows have the input dimension");
    out.w_rows = ExprMatrix::from_rows(w_rows, system.m2()).expect("rows have the input dimension");
    Ok(out)
}

/// `η_i, L_f η_i, …, L_f^{k-1} η_i` for one row.
pub fn drift_chain(system: &SystemModel, block: Block, row: usize, k: usize) -> Vec<Expr> {
    let (eta, _, _) = system.block(block);
    let mut chain = DriftChain::new(system, &eta[row]);
    (0..k).map(|j| chain.get(j).clone()).collect()
}

/// Numeric rank evidence for a matrix of expressions near an operating point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankCertificate {
    pub rank_at_op: usize,
    /// Rank at the operating point equals `min(rows, cols)` and is the same
    /// at every perturbation; square matrices also pass [`DET_TOL`].
    pub full_rank_everywhere: bool,
    pub constant_rank: bool,
    pub relative_det_at_op: Option<f64>,
}

/// Rank of `m` at `op` and at Gaussian perturbations of it.
pub fn certify_rank(m: &ExprMatrix, op: &Assignment) -> RankCertificate {
    let full = m.nrows().min(m.ncols());
    let mut ranks = Vec::new();
    let mut rel_det = None;
    let mut square_ok = true;
    for (idx, p) in perturbed_points(op).iter().enumerate() {
        let Ok(v) = m.eval(p) else {
            ranks.push(0);
            square_ok = false;
            continue;
        };
        if v.iter().any(|x| !x.is_finite()) {
            ranks.push(0);
            square_ok = false;
            continue;
        }
        ranks.push(numeric_rank(&v, RANK_TOL));
        if m.nrows() == m.ncols() {
            let rd = relative_det(&v);
            if idx == 0 {
                rel_det = Some(rd);
            }
            square_ok &= rd > DET_TOL;
        }
    }
    let rank_at_op = ranks[0];
    let constant_rank = ranks.iter().all(|&r| r == rank_at_op);
    RankCertificate {
        rank_at_op,
        full_rank_everywhere: constant_rank && rank_at_op == full && square_ok,
        constant_rank,
        relative_det_at_op: rel_det,
    }
}

/// Largest deviations found by [`numeric_crosscheck`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrosscheckReport {
    pub trials: usize,
    /// Per output row, the largest `|numeric - symbolic| / max(1, |symbolic|)`.
    pub per_row: Vec<f64>,
    pub max_relative_deviation: f64,
}

const CHECK_DT: f64 = 1e-4;
const CHECK_SPACING: usize = 10;

/// Integrates short open-loop trajectories under smooth random inputs,
/// differentiates each output `r_i` times by central differences, and
/// compares with `p + A·u + B·w` from the report.
pub fn numeric_crosscheck(report: &RelativeDegreeReport, system: &SystemModel, trials: usize) -> CrosscheckReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xc0ffee);
    let (eta, abar, bbar) = system.block(report.block);
    let (u_mat, w_mat) = match report.wrt {
        Wrt::U => (&report.a, &report.b),
        Wrt::W => (&report.b, &report.a),
    };
    let layout: Vec<Symbol> = system
        .state
        .iter()
        .chain(&system.inputs)
        .chain(&system.extra)
        .cloned()
        .collect();
    let compile = |e: &Expr| e.compile(&layout).expect("model expressions use declared symbols");
    let field: Vec<_> = system.closed_field().iter().map(compile).collect();
    let outputs: Vec<_> = (0..eta.len())
        .map(|i| {
            let mut terms = vec![eta[i].clone()];
            for (j, u) in system.inputs.iter().enumerate() {
                terms.push(abar.get(i, j).clone() * Expr::Sym(u.clone()));
            }
            for (j, w) in system.extra.iter().enumerate() {
                terms.push(bbar.get(i, j).clone() * Expr::Sym(w.clone()));
            }
            compile(&sum(terms))
        })
        .collect();
    let predicted: Vec<_> = (0..eta.len())
        .map(|i| {
            let mut terms = vec![report.p[i].clone()];
            for (j, u) in system.inputs.iter().enumerate() {
                terms.push(u_mat.get(i, j).clone() * Expr::Sym(u.clone()));
            }
            for (j, w) in system.extra.iter().enumerate() {
                terms.push(w_mat.get(i, j).clone() * Expr::Sym(w.clone()));
            }
            compile(&sum(terms))
        })
        .collect();

    let n = system.n();
    let m = system.m1() + system.m2();
    let op = system.operating_assignment();
    let max_r = report.r.iter().copied().max().unwrap_or(0);
    let s = CHECK_SPACING as f64 * CHECK_DT;
    let steps = 2 * max_r * CHECK_SPACING;
    let mut per_row = vec![0.0f64; eta.len()];

    for _ in 0..trials {
        // Smooth inputs a + b sin(ω t + φ), nonzero symbols kept away from 0.
        let params: Vec<(f64, f64, f64, f64)> = layout[n..]
            .iter()
            .map(|sym| {
                let base = op.get(sym).copied().unwrap_or(0.0);
                let a = if system.nonzero.contains(sym) { base } else { rng.random_range(-1.0..1.0) };
                (a, rng.random_range(-0.05..0.05), rng.random_range(0.5..2.0), rng.random_range(0.0..6.0))
            })
            .collect();
        let inputs_at = |t: f64| -> Vec<f64> {
            params.iter().map(|(a, b, w, ph)| a + b * (w * t + ph).sin()).collect()
        };
        let mut x: Vec<f64> = system
            .state
            .iter()
            .map(|sym| {
                let base = op[sym];
                if system.nonzero.contains(sym) {
                    base
                } else {
                    base + rng.random_range(-0.5..0.5)
                }
            })
            .collect();
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        states.push(x.clone());
        let mut diverged = false;
        for k in 0..steps {
            let t = k as f64 * CHECK_DT;
            let next = rk4_step(
                |t, x, dx| {
                    let mut sl = Vec::with_capacity(n + m);
                    sl.extend_from_slice(x);
                    sl.extend(inputs_at(t));
                    for (d, fe) in dx.iter_mut().zip(&field) {
                        *d = fe.eval(&sl).unwrap_or(f64::NAN);
                    }
                    Ok(())
                },
                t,
                &x,
                CHECK_DT,
                k,
            );
            match next {
                Ok(next) => x = next,
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
            states.push(x.clone());
        }
        if diverged {
            per_row.iter_mut().for_each(|d| *d = f64::INFINITY);
            continue;
        }
        let slots_at = |idx: usize| -> Vec<f64> {
            let mut sl = states[idx].clone();
            sl.extend(inputs_at(idx as f64 * CHECK_DT));
            sl
        };
        let center = max_r * CHECK_SPACING;
        let at_center = slots_at(center);
        for (i, &ri) in report.r.iter().enumerate() {
            let samples: Vec<f64> = (0..=ri)
                .map(|k| {
                    let idx = (center as i64 + (ri as i64 - 2 * k as i64) * CHECK_SPACING as i64) as usize;
                    outputs[i].eval(&slots_at(idx)).unwrap_or(f64::NAN)
                })
                .collect();
            let numeric = central_difference(&samples, ri, s);
            let symbolic = predicted[i].eval(&at_center).unwrap_or(f64::NAN);
            let dev = (numeric - symbolic).abs() / symbolic.abs().max(1.0);
            per_row[i] = per_row[i].max(if dev.is_nan() { f64::INFINITY } else { dev });
        }
    }
    let max = per_row.iter().cloned().fold(0.0, f64::max);
    CrosscheckReport { trials, per_row, max_relative_deviation: max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::symbols::SymbolTable;

    fn xs(names: &[&str]) -> Vec<Symbol> {
        names.iter().map(|n| Symbol::new(n)).collect()
    }

    fn exprs(table: &SymbolTable, src: &[&str]) -> Vec<Expr> {
        src.iter().map(|s| parse_expr(s, table).unwrap()).collect()
    }

    fn double_integrator() -> SystemModel {
        ModelSpec {
            name: "double_integrator",
            states: &["x1", "x2"],
            inputs: &["u"],
            f: &["x2", "0"],
            g: &[&["0"], &["1"]],
            h1: &["x1"],
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn lie_of_coordinate_along_shift() {
        let t = SymbolTable::with_groups(&["x1", "x2"], &[], &[]).unwrap();
        let f = exprs(&t, &["x2", "0"]);
        let h = parse_expr("x1", &t).unwrap();
        assert_eq!(lie_derivative(&h, &f, &xs(&["x1", "x2"])).to_string(), "x2");
        let c = Expr::Const(3.0);
        assert!(lie_derivative(&c, &f, &xs(&["x1", "x2"])).is_zero());
    }

    #[test]
    fn iterated_lie_orders() {
        let t = SymbolTable::with_groups(&["x1", "x2", "x3"], &[], &[]).unwrap();
        let s = xs(&["x1", "x2", "x3"]);
        let h = parse_expr("x1", &t).unwrap();
        assert_eq!(iterated_lie(&h, &exprs(&t, &["x2", "x3", "0"]), &s, 0), h);
        assert_eq!(iterated_lie(&h, &exprs(&t, &["x2", "x3", "0"]), &s, 2).to_string(), "x3");
        assert!(iterated_lie(&h, &exprs(&t, &["x2", "0", "0"]), &s, 2).is_zero());
    }

    #[test]
    fn double_integrator_degree_two() {
        let m = double_integrator();
        let rep = vector_relative_degree(&m, Block::Y1, Wrt::U, 3).unwrap();
        assert_eq!(rep.r, vec![2]);
        assert!(rep.regular);
        assert_eq!(rep.a.to_string(), "[1]");
        assert_eq!(extended_decoupling(&m, Block::Y1, &[2], Wrt::U).to_string(), "[1]");
        assert!(rep.zero_columns.is_empty());
    }

    #[test]
    fn max_order_exceeded_when_input_never_appears() {
        let m = ModelSpec {
            name: "decoupled",
            states: &["x1", "x2"],
            inputs: &["u"],
            f: &["0", "0"],
            g: &[&["0"], &["1"]],
            h1: &["x1"],
            ..Default::default()
        }
        .build()
        .unwrap();
        assert_eq!(
            vector_relative_degree(&m, Block::Y1, Wrt::U, 3),
            Err(AnalysisError::MaxOrderExceeded { output: 0, max_order: 3 })
        );
    }

    #[test]
    fn crosscheck_double_integrator() {
        let m = double_integrator();
        let rep = vector_relative_degree(&m, Block::Y1, Wrt::U, 3).unwrap();
        let cc = numeric_crosscheck(&rep, &m, 10);
        assert!(cc.max_relative_deviation < 1e-3, "{cc:?}");
    }

    #[test]
    fn crosscheck_feedthrough_is_exact() {
        let m = ModelSpec {
            name: "ft",
            states: &["x"],
            inputs: &["u"],
            f: &["-x"],
            g: &[&["1"]],
            h1: &["x"],
            abar1: &[&["2"]],
            ..Default::default()
        }
        .build()
        .unwrap();
        let rep = vector_relative_degree(&m, Block::Y1, Wrt::U, 2).unwrap();
        assert_eq!(rep.r, vec![0]);
        let cc = numeric_crosscheck(&rep, &m, 5);
        assert!(cc.max_relative_deviation < 1e-9, "{cc:?}");
    }
}
