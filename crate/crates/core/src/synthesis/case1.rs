use crate::error::SynthesisError;
use crate::lie::{default_max_order, drift_chain, expand_block, vector_relative_degree, Block, SystemModel, Wrt};
use crate::matrix::ExprMatrix;

use super::{
    certify, declare_references, gain_sum, resolve_gains, syms_to_exprs, vec_add, vec_sub, Case,
    ControllerKind, FeasibilityCertificate, InternalController, SynthesisOptions, SynthesisResult,
};

/// Regular case: `A1` is nonsingular near `x°` and the internal controller is
/// the static law `u = A1⁻¹[−p1 + Σ_{i<r1} K_i (r^(i) − y1^(i)) + r^(r1)]`.
///
/// With `u_ext = (r^(r1), w)` the stacked outputs satisfy
/// `y^(ρ) = φ + Γ u_ext` with `Γ = [[I, B1], [A2 A1⁻¹, B2]]`.
pub fn synth_case1(system: &SystemModel, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthesisError> {
    let max_order = opts.max_order.unwrap_or_else(|| default_max_order(system));
    let rep1 = vector_relative_degree(system, Block::Y1, Wrt::U, max_order)?;
    if !rep1.regular {
        return Err(SynthesisError::CaseMismatch(format!(
            "A1 is singular near the operating point (rank {} < {}); use case 2",
            rep1.rank_at_op,
            system.m1()
        )));
    }
    let r1 = uniform_order(&rep1.r)?;
    for (i, ro) in rep1.r_other.iter().enumerate() {
        if matches!(ro, Some(k) if *k < r1) {
            return Err(SynthesisError::AssumptionViolated(format!(
                "extra input reaches y1[{i}] at order {} below its relative degree {r1}",
                ro.unwrap()
            )));
        }
    }
    let exp2 = if system.m2() > 0 { Some(expand_block(system, Block::Y2, max_order)?) } else { None };

    let gains = resolve_gains(opts.gains.as_ref(), r1, system.m1())?;
    let mut table = system.table.clone();
    let refs = declare_references(&mut table, system.m1(), r1)?;

    let lower: Vec<Vec<crate::expr::Expr>> = {
        let chains: Vec<_> = (0..system.m1()).map(|j| drift_chain(system, Block::Y1, j, r1)).collect();
        (0..r1).map(|i| chains.iter().map(|c| c[i].clone()).collect()).collect()
    };
    let s = gain_sum(&gains, &refs, &lower);
    let a1_inv = rep1.a.inverse();
    let inner = vec_add(&vec_sub(&s, &rep1.p), &syms_to_exprs(&refs[r1]));
    let u_expr = a1_inv.mul_vec(&inner);

    let m1 = system.m1();
    let b1 = rep1.b.clone();
    let (a2, b2, p2, orders2, lower2) = match &exp2 {
        Some(e) => (e.u_rows.clone(), e.w_rows.clone(), e.drift.clone(), e.orders.clone(), e.lower.clone()),
        None => (ExprMatrix::zeros(0, m1), ExprMatrix::zeros(0, 0), vec![], vec![], vec![]),
    };
    let a2_a1inv = a2.mul(&a1_inv);
    let gamma = ExprMatrix::blocks(&ExprMatrix::identity(m1), &b1, &a2_a1inv, &b2);
    let drift_in = vec_sub(&s, &rep1.p);
    let phi2 = vec_add(&p2, &a2_a1inv.mul_vec(&drift_in));
    let mut phi = s.clone();
    phi.extend(phi2);

    let condition = b2.sub(&a2_a1inv.mul(&b1)).det();
    let feasibility = certify(condition, &gamma, system, None);

    let mut orders = vec![r1; m1];
    orders.extend(orders2);
    let mut output_derivatives: Vec<Vec<_>> =
        (0..m1).map(|j| drift_chain(system, Block::Y1, j, r1)).collect();
    output_derivatives.extend(lower2);

    let reference_layout = refs[..r1].iter().flatten().cloned().collect();
    let mut u_ext_layout = refs[r1].clone();
    u_ext_layout.extend(system.extra.iter().cloned());

    Ok(SynthesisResult {
        case: Case::Regular,
        controller: InternalController {
            kind: ControllerKind::Static,
            k1: 0,
            gains,
            inputs: system.inputs.clone(),
            delayed: vec![],
            u_expr,
            xi_dynamics: vec![],
        },
        gamma,
        phi,
        extended_state_layout: system.state.clone(),
        reference_layout,
        u_ext_layout,
        orders,
        output_derivatives,
        feasibility,
        details: None,
        plant: system.clone(),
        table,
    })
}

/// Certificate for `det(B2 − A2 A1⁻¹ B1) ≠ 0`, already computed during
/// synthesis.
pub fn feasibility_case1(synth: &SynthesisResult) -> Result<FeasibilityCertificate, SynthesisError> {
    if synth.case != Case::Regular {
        return Err(SynthesisError::CaseMismatch("expected a case-1 synthesis".into()));
    }
    Ok(synth.feasibility.clone())
}

pub(crate) fn uniform_order(r: &[usize]) -> Result<usize, SynthesisError> {
    let first = r[0];
    if r.iter().any(|&k| k != first) {
        return Err(SynthesisError::Unsupported(format!(
            "y1 rows have different relative degrees {r:?}; the internal controller needs a common order"
        )));
    }
    Ok(first)
}
