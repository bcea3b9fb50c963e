use serde::Serialize;

use crate::error::SynthesisError;
use crate::expr::{simplify, sum, Expr};
use crate::lie::{
    certify_rank, default_max_order, drift_chain, expand_block, lie_derivative,
    output_derivative, ser_matrix, ser_vec, vector_relative_degree, Block, RelativeDegreeReport, SystemModel,
    Wrt,
};
use crate::matrix::ExprMatrix;
use crate::sampling::{identically_zero, PointSampler};
use crate::symbols::{Category, Symbol};

use super::case1::uniform_order;
use super::{
    agree_numerically, certify, declare_references, gain_sum, resolve_gains, syms_to_exprs, vec_add, vec_sub,
    Case, ConditionVariant, ControllerKind, FeasibilityCertificate, InternalController, SynthesisOptions,
    SynthesisResult,
};

/// A constant column permutation bringing `A1` to `[a_1 … a_k1 | 0 … 0]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputTransformation {
    /// `permutation[new] = old` column index.
    pub permutation: Vec<usize>,
    /// Number of columns that do not vanish identically.
    pub k1: usize,
    /// Permutation matrix with `v = M u`.
    #[serde(serialize_with = "ser_matrix")]
    pub m: ExprMatrix,
}

/// Finds the column permutation for a rank-deficient `A1` whose deficiency
/// shows up as identically zero columns.
pub fn input_transformation(a1: &ExprMatrix, system: &SystemModel) -> Result<InputTransformation, SynthesisError> {
    let m1 = a1.ncols();
    let cert = certify_rank(a1, &system.operating_assignment());
    if cert.full_rank_everywhere {
        return Err(SynthesisError::NotApplicable);
    }
    let mut sampler = PointSampler::new(system.sample_symbols(), &system.nonzero);
    let zero: Vec<usize> = (0..m1).filter(|&j| identically_zero(&a1.col(j), &mut sampler)).collect();
    if zero.is_empty() {
        return Err(SynthesisError::NotColumnDegenerate { rank: cert.rank_at_op, m1 });
    }
    let mut permutation: Vec<usize> = (0..m1).filter(|j| !zero.contains(j)).collect();
    let k1 = permutation.len();
    permutation.extend(zero);
    let mut m = ExprMatrix::zeros(m1, m1);
    for (new, &old) in permutation.iter().enumerate() {
        m.set(new, old, Expr::one());
    }
    Ok(InputTransformation { permutation, k1, m })
}

/// Puts integrators on the first `k1` permuted inputs: each delayed input
/// `u_i` becomes a state `ξ_i` (keeping its name) driven by a new input
/// `u_i_dot`. The new input vector is `(u_dot…, remaining inputs…)`.
pub fn dynamic_extension(system: &SystemModel, tr: &InputTransformation) -> Result<SystemModel, SynthesisError> {
    let delayed: Vec<usize> = tr.permutation[..tr.k1].to_vec();
    let rest: Vec<usize> = tr.permutation[tr.k1..].to_vec();
    let mut table = system.table.clone();
    let xi: Vec<Symbol> = delayed.iter().map(|&i| system.inputs[i].clone()).collect();
    for s in &xi {
        table.reclassify(s.as_str(), Category::ControllerState)?;
    }
    let mut dots = Vec::new();
    for s in &xi {
        let name = table.fresh_name(&format!("{s}_dot"));
        dots.push(table.declare(&name, Category::Input)?);
    }
    let n = system.n();
    let k1 = tr.k1;
    let m1 = system.m1();

    let mut state = system.state.clone();
    state.extend(xi.iter().cloned());
    let mut inputs = dots.clone();
    inputs.extend(rest.iter().map(|&j| system.inputs[j].clone()));

    // Drift picks up the delayed columns of G times ξ.
    let mut f: Vec<Expr> = (0..n)
        .map(|r| {
            let mut terms = vec![system.f[r].clone()];
            for (c, &i) in delayed.iter().enumerate() {
                terms.push(system.g.get(r, i).clone() * Expr::Sym(xi[c].clone()));
            }
            simplify(&sum(terms))
        })
        .collect();
    f.extend(std::iter::repeat_n(Expr::zero(), k1));

    let mut g = ExprMatrix::zeros(n + k1, m1);
    for r in 0..n {
        for (c, &j) in rest.iter().enumerate() {
            g.set(r, k1 + c, system.g.get(r, j).clone());
        }
    }
    for c in 0..k1 {
        g.set(n + c, c, Expr::one());
    }
    let h = system.h.vstack(&ExprMatrix::zeros(k1, system.m2()));

    let shift_output = |eta: &[Expr], abar: &ExprMatrix| -> (Vec<Expr>, ExprMatrix) {
        let eta2 = eta
            .iter()
            .enumerate()
            .map(|(row, e)| {
                let mut terms = vec![e.clone()];
                for (c, &i) in delayed.iter().enumerate() {
                    terms.push(abar.get(row, i).clone() * Expr::Sym(xi[c].clone()));
                }
                simplify(&sum(terms))
            })
            .collect();
        let mut ab = ExprMatrix::zeros(abar.nrows(), m1);
        for row in 0..abar.nrows() {
            for (c, &j) in rest.iter().enumerate() {
                ab.set(row, k1 + c, abar.get(row, j).clone());
            }
        }
        (eta2, ab)
    };
    let (h1, abar1) = shift_output(&system.h1, &system.abar1);
    let (h2, abar2) = shift_output(&system.h2, &system.abar2);

    let model = SystemModel {
        name: format!("{}+ext", system.name),
        table,
        state,
        inputs,
        extra: system.extra.clone(),
        f,
        g,
        h,
        h1,
        h2,
        abar1,
        abar2,
        bbar1: system.bbar1.clone(),
        bbar2: system.bbar2.clone(),
        operating_point: system.operating_point.clone(),
        nonzero: system.nonzero.clone(),
        angular: system.angular.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Turns the extra inputs `w` into states driven by new inputs `w_dot`; the
/// `B̄ w` output terms become part of the state-dependent outputs.
pub fn integrate_extra(system: &SystemModel) -> Result<SystemModel, SynthesisError> {
    let mut table = system.table.clone();
    let mut dots = Vec::new();
    for w in &system.extra {
        let name = table.fresh_name(&format!("{w}_dot"));
        dots.push(table.declare(&name, Category::ExtraInput)?);
    }
    let n = system.n();
    let m2 = system.m2();
    let w_exprs = syms_to_exprs(&system.extra);
    let mut state = system.state.clone();
    state.extend(system.extra.iter().cloned());
    let mut f = vec_add(&system.f, &system.h.mul_vec(&w_exprs));
    f.extend(std::iter::repeat_n(Expr::zero(), m2));
    let g = system.g.vstack(&ExprMatrix::zeros(m2, system.m1()));
    let h = ExprMatrix::zeros(n, m2).vstack(&ExprMatrix::identity(m2));
    let h1 = vec_add(&system.h1, &system.bbar1.mul_vec(&w_exprs));
    let h2 = vec_add(&system.h2, &system.bbar2.mul_vec(&w_exprs));
    let model = SystemModel {
        name: format!("{}+w", system.name),
        table,
        state,
        inputs: system.inputs.clone(),
        extra: dots,
        f,
        g,
        h,
        h1,
        h2,
        abar1: system.abar1.clone(),
        abar2: system.abar2.clone(),
        bbar1: ExprMatrix::zeros(system.m1(), m2),
        bbar2: ExprMatrix::zeros(m2, m2),
        operating_point: system.operating_point.clone(),
        nonzero: system.nonzero.clone(),
        angular: system.angular.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Case-2 intermediates, kept for inspection and golden comparisons.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Case2Details {
    pub transformation: InputTransformation,
    /// Model with state `x_a = (x, ξ)` before the extra inputs are integrated.
    #[serde(skip)]
    pub extended: SystemModel,
    /// Coefficient of `ū` in `y1^(r1+1)`.
    #[serde(serialize_with = "ser_matrix")]
    pub n: ExprMatrix,
    /// `N` at `w = 0`.
    #[serde(serialize_with = "ser_matrix")]
    pub n1: ExprMatrix,
    /// `N − N1`; vanishes at `w = 0`.
    #[serde(serialize_with = "ser_matrix")]
    pub n2: ExprMatrix,
    /// Coefficient of `ẇ` in `y1^(r1+1)`.
    #[serde(serialize_with = "ser_matrix")]
    pub b1: ExprMatrix,
    /// Drift of `y1^(r1+1)`.
    #[serde(serialize_with = "ser_vec")]
    pub drift: Vec<Expr>,
    /// Drift at `w = 0`.
    #[serde(serialize_with = "ser_vec")]
    pub drift0: Vec<Expr>,
    /// Coefficient of `ū` in the `y2` derivatives.
    #[serde(serialize_with = "ser_matrix")]
    pub abar2: ExprMatrix,
    /// `y2` decoupling matrix of the model before extension, columns permuted.
    #[serde(serialize_with = "ser_matrix")]
    pub a2_before_extension: ExprMatrix,
    /// Drift of the `y2` derivatives.
    #[serde(serialize_with = "ser_vec")]
    pub y2_drift: Vec<Expr>,
    pub decomposition: TermDecomposition,
}

/// Term-by-term rebuild of `y1^(r1+1)` from the pre-extension quantities
/// `p1`, `A1`, `B1`, cross-checked against the direct computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermDecomposition {
    /// `Σ_{i ≤ k1} L_{g_i} p1 ξ_i`.
    #[serde(serialize_with = "ser_vec")]
    pub phi_a: Vec<Expr>,
    #[serde(serialize_with = "ser_matrix")]
    pub d1: ExprMatrix,
    /// `ū`-coefficient of `Ȧ1 u` that survives at `w = 0`.
    #[serde(serialize_with = "ser_matrix")]
    pub a1_dot: ExprMatrix,
    #[serde(serialize_with = "ser_vec")]
    pub n1_terms: Vec<Expr>,
    #[serde(serialize_with = "ser_vec")]
    pub n2_terms: Vec<Expr>,
    /// `Σ_{i ≤ k1} a_{2,i} ξ_i`.
    #[serde(serialize_with = "ser_vec")]
    pub phi_b: Vec<Expr>,
    pub phi_a_identically_zero: bool,
    /// Largest relative mismatch between the rebuilt and the direct
    /// drift (including `φa`), `N1` and `N2` over sampled states.
    pub max_deviation: f64,
}

/// Singular case: dynamic extension, integration of the extra inputs, and
/// the internal controller
/// `ū = N1⁻¹[−φ0 + Σ_{i ≤ r1} K_i (r^(i) − y1^(i)) + r^(r1+1)]`.
///
/// `y1^(i)` inside the controller are the nominal output derivatives at
/// `w = 0`, so the controller never reads the extra input. With
/// `u_ext = (r^(r1+1), ẇ)`,
/// `Γ = [[I + N2 N1⁻¹, B1], [Ā2 N1⁻¹, 0]]`.
pub fn synth_case2(system: &SystemModel, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthesisError> {
    let max_order = opts.max_order.unwrap_or_else(|| default_max_order(system));
    let rep1 = vector_relative_degree(system, Block::Y1, Wrt::U, max_order)?;
    let r1 = uniform_order(&rep1.r)?;
    for (i, ro) in rep1.r_other.iter().enumerate() {
        if let Some(k) = ro {
            if *k < r1 {
                return Err(SynthesisError::AssumptionViolated(format!(
                    "extra input reaches y1[{i}] at order {k} below its relative degree {r1}"
                )));
            }
        }
    }
    let tr = match input_transformation(&rep1.a, system) {
        Err(SynthesisError::NotApplicable) => {
            return Err(SynthesisError::CaseMismatch("A1 is nonsingular near the operating point; use case 1".into()))
        }
        other => other?,
    };
    let ext = dynamic_extension(system, &tr)?;
    let full = integrate_extra(&ext)?;
    let m1 = system.m1();
    let m2 = system.m2();
    let w = system.extra.clone();

    let mut sampler = PointSampler::new(full.sample_symbols(), &full.nonzero);
    let mut n_rows = Vec::new();
    let mut b1_rows = Vec::new();
    let mut drift = Vec::new();
    for i in 0..m1 {
        for k in 0..=r1 {
            let d = output_derivative(&full, Block::Y1, i, k);
            if !identically_zero(&d.u_row, &mut sampler) || !identically_zero(&d.w_row, &mut sampler) {
                return Err(SynthesisError::AssumptionViolated(format!(
                    "after the extension an input reaches y1[{i}] at order {k} <= {r1}"
                )));
            }
        }
        let d = output_derivative(&full, Block::Y1, i, r1 + 1);
        n_rows.push(d.u_row.iter().map(simplify).collect());
        b1_rows.push(d.w_row.iter().map(simplify).collect());
        drift.push(d.drift);
    }
    let n = ExprMatrix::from_rows(n_rows, m1).expect("rows have the input dimension");
    let b1 = ExprMatrix::from_rows(b1_rows, m2).expect("rows have the input dimension");
    let n1 = n.at_zero(&w);
    let n2 = n.sub(&n1);
    let drift0: Vec<Expr> = drift.iter().map(|e| e.at_zero(&w)).collect();

    let op = full.operating_assignment();
    let n1_cert = certify_rank(&n1, &op);
    if !n1_cert.full_rank_everywhere {
        let det = n1.det().eval(&op).unwrap_or(0.0);
        return Err(SynthesisError::N1Singular { det });
    }

    let exp2 = if m2 > 0 { Some(expand_block(&full, Block::Y2, max_order + 1)?) } else { None };
    let (abar2, y2_drift, orders2, lower2) = match &exp2 {
        Some(e) => {
            if !e.w_rows.is_structurally_zero() && !identically_zero(e.w_rows.entries(), &mut sampler) {
                return Err(SynthesisError::AssumptionViolated(
                    "the extra-input rate reaches y2 at its first input-carrying order".into(),
                ));
            }
            (e.u_rows.clone(), e.drift.clone(), e.orders.clone(), e.lower.clone())
        }
        None => (ExprMatrix::zeros(0, m1), vec![], vec![], vec![]),
    };

    let gains = resolve_gains(opts.gains.as_ref(), r1 + 1, m1)?;
    let mut table = full.table.clone();
    let refs = declare_references(&mut table, m1, r1 + 1)?;
    let chains: Vec<Vec<Expr>> = (0..m1).map(|j| drift_chain(&full, Block::Y1, j, r1 + 1)).collect();
    let nominal: Vec<Vec<Expr>> =
        (0..=r1).map(|i| chains.iter().map(|c| c[i].at_zero(&w)).collect()).collect();
    let s = gain_sum(&gains, &refs[..=r1], &nominal);

    let n1_inv = n1.inverse();
    let d = vec_sub(&s, &drift0);
    let inner = vec_add(&d, &syms_to_exprs(&refs[r1 + 1]));
    let u_expr = n1_inv.mul_vec(&inner);

    let g11 = ExprMatrix::identity(m1).add(&n2.mul(&n1_inv));
    let q = abar2.mul(&n1_inv);
    let gamma = ExprMatrix::blocks(&g11, &b1, &q, &ExprMatrix::zeros(m2, m2));
    let mut phi = vec_add(&drift, &g11.mul_vec(&d));
    phi.extend(vec_add(&y2_drift, &q.mul_vec(&d)));

    let condition = q.mul(&b1).det();
    let a2_before = if m2 > 0 {
        let e = expand_block(system, Block::Y2, max_order)?;
        e.u_rows.select_columns(&tr.permutation)
    } else {
        ExprMatrix::zeros(0, m1)
    };
    let printed = a2_before.mul(&n1_inv).mul(&b1).det();
    let points: Vec<_> = (0..20).map(|_| sampler.sample()).collect();
    let variant = ConditionVariant { agrees: agree_numerically(&condition, &printed, &points), condition: printed };
    let feasibility = certify(condition, &gamma, &full, Some(variant));

    let decomposition = decompose(system, &rep1, &tr, &full, &n1, &n2, &drift);

    let mut orders = vec![r1 + 1; m1];
    orders.extend(orders2);
    let mut output_derivatives = chains;
    output_derivatives.extend(lower2);
    let reference_layout = refs[..=r1].iter().flatten().cloned().collect();
    let mut u_ext_layout = refs[r1 + 1].clone();
    u_ext_layout.extend(full.extra.iter().cloned());
    let delayed: Vec<Symbol> = ext.state[system.n()..].to_vec();

    Ok(SynthesisResult {
        case: Case::Singular,
        controller: InternalController {
            kind: ControllerKind::Dynamic,
            k1: tr.k1,
            gains,
            inputs: full.inputs.clone(),
            delayed,
            xi_dynamics: u_expr[..tr.k1].to_vec(),
            u_expr,
        },
        gamma,
        phi,
        extended_state_layout: full.state.clone(),
        reference_layout,
        u_ext_layout,
        orders,
        output_derivatives,
        feasibility,
        details: Some(Case2Details {
            transformation: tr,
            extended: ext,
            n,
            n1,
            n2,
            b1,
            drift,
            drift0,
            abar2,
            a2_before_extension: a2_before,
            y2_drift,
            decomposition,
        }),
        plant: full,
        table,
    })
}

/// Certificate for `det(Ā2 N1⁻¹ B1) ≠ 0`, already computed during synthesis.
pub fn feasibility_case2(synth: &SynthesisResult) -> Result<FeasibilityCertificate, SynthesisError> {
    if synth.case != Case::Singular {
        return Err(SynthesisError::CaseMismatch("expected a case-2 synthesis".into()));
    }
    Ok(synth.feasibility.clone())
}

/// Rebuilds `y1^(r1+1)` from `p1`, `A1`, `B1` of the original model.
fn decompose(
    system: &SystemModel,
    rep1: &RelativeDegreeReport,
    tr: &InputTransformation,
    full: &SystemModel,
    n1: &ExprMatrix,
    n2: &ExprMatrix,
    drift: &[Expr],
) -> TermDecomposition {
    let x = &system.state;
    let delayed = &tr.permutation[..tr.k1];
    let rest = &tr.permutation[tr.k1..];
    let xi: Vec<Expr> = delayed.iter().map(|&i| Expr::Sym(system.inputs[i].clone())).collect();
    let w: Vec<Expr> = syms_to_exprs(&system.extra);
    let m1 = system.m1();
    let rows = rep1.p.len();
    let col = |j: usize| system.g.col(j);
    let hw: Vec<Expr> = system.h.mul_vec(&w);
    let f_hw = vec_add(&system.f, &hw);

    let mut phi_a = Vec::new();
    let mut n1_terms = Vec::new();
    let mut n2_terms = Vec::new();
    let mut phi_rebuilt = Vec::new();
    let mut d1 = ExprMatrix::zeros(rows, m1);
    let mut a1_dot = ExprMatrix::zeros(rows, m1);
    let mut a1_u = ExprMatrix::zeros(rows, m1);
    let mut b1_dot2 = ExprMatrix::zeros(rows, m1);
    for r in 0..rows {
        let p1 = &rep1.p[r];
        phi_a.push(simplify(&sum(
            delayed.iter().zip(&xi).map(|(&i, xi)| lie_derivative(p1, &col(i), x) * xi.clone()).collect(),
        )));
        for (c, &j) in rest.iter().enumerate() {
            d1.set(r, tr.k1 + c, lie_derivative(p1, &col(j), x));
            let t = delayed
                .iter()
                .zip(&xi)
                .map(|(&i, xi)| lie_derivative(rep1.a.get(r, i), &col(j), x) * xi.clone())
                .collect();
            a1_dot.set(r, tr.k1 + c, simplify(&sum(t)));
            let t = (0..system.m2())
                .map(|k| lie_derivative(rep1.b.get(r, k), &col(j), x) * w[k].clone())
                .collect();
            b1_dot2.set(r, tr.k1 + c, simplify(&sum(t)));
        }
        for (c, &i) in delayed.iter().enumerate() {
            a1_u.set(r, c, rep1.a.get(r, i).clone());
        }
        // n1: the remaining part of Ȧ1 u, driven by f + H w and the delayed inputs.
        let mut t = Vec::new();
        for (&i, xi_i) in delayed.iter().zip(&xi) {
            let a = rep1.a.get(r, i);
            t.push(lie_derivative(a, &f_hw, x) * xi_i.clone());
            for (&i2, xi2) in delayed.iter().zip(&xi) {
                t.push(lie_derivative(a, &col(i2), x) * xi2.clone() * xi_i.clone());
            }
        }
        n1_terms.push(simplify(&sum(t)));
        // n2: the part of Ḃ1 w not multiplying the remaining inputs.
        let mut t = Vec::new();
        for k in 0..system.m2() {
            let b = rep1.b.get(r, k);
            t.push(lie_derivative(b, &f_hw, x) * w[k].clone());
            for (&i2, xi2) in delayed.iter().zip(&xi) {
                t.push(lie_derivative(b, &col(i2), x) * xi2.clone() * w[k].clone());
            }
        }
        n2_terms.push(simplify(&sum(t)));
        let lf = lie_derivative(p1, &f_hw, x);
        phi_rebuilt.push(simplify(
            &(lf + n1_terms[r].clone() + n2_terms[r].clone() + phi_a[r].clone()),
        ));
    }
    let n1_rebuilt = a1_u.add(&d1).add(&a1_dot);
    let n2_rebuilt = b1_dot2;

    let mut phi_b = Vec::new();
    if system.m2() > 0 {
        if let Ok(e) = expand_block(system, Block::Y2, default_max_order(system)) {
            for r in 0..system.m2() {
                phi_b.push(simplify(&sum(
                    delayed.iter().zip(&xi).map(|(&i, xi)| e.u_rows.get(r, i).clone() * xi.clone()).collect(),
                )));
            }
        }
    }

    let mut sampler = PointSampler::new(full.sample_symbols(), &full.nonzero);
    let phi_a_identically_zero = identically_zero(&phi_a, &mut sampler);
    let mut max_deviation = 0.0f64;
    for _ in 0..20 {
        let p = sampler.sample();
        let pairs = drift
            .iter()
            .zip(&phi_rebuilt)
            .chain(n1.entries().iter().zip(n1_rebuilt.entries()))
            .chain(n2.entries().iter().zip(n2_rebuilt.entries()));
        for (a, b) in pairs {
            if let (Ok(x), Ok(y)) = (a.eval(&p), b.eval(&p)) {
                max_deviation = max_deviation.max((x - y).abs() / x.abs().max(1.0));
            }
        }
    }
    TermDecomposition {
        phi_a,
        d1,
        a1_dot,
        n1_terms,
        n2_terms,
        phi_b,
        phi_a_identically_zero,
        max_deviation,
    }
}
