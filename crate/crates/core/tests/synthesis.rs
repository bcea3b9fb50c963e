use approx::assert_relative_eq;
use ioext_core::error::SynthesisError;
use ioext_core::expr::{parse_expr, simplify, Expr};
use ioext_core::lie::{default_max_order, vector_relative_degree, Block, Wrt};
use ioext_core::models::{golden_matrices, linear_oracle_suite, random_linear_case1, unicycle, H_STAR};
use ioext_core::sampling::PointSampler;
use ioext_core::symbols::Symbol;
use ioext_core::synthesis::{
    feasibility_case1, feasibility_case2, input_transformation, recommend_case, role_swap_report, synth_case1,
    synth_case2, synthesize, Case, SynthesisDoc, SynthesisOptions,
};
use nalgebra::DMatrix;

fn max_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn oracle_gammas_match_hand_derivation() {
    for o in linear_oracle_suite() {
        let s = synth_case1(&o.model, &SynthesisOptions::default()).unwrap();
        let g = s.gamma.eval(&o.model.operating_assignment()).unwrap();
        assert_eq!(g.shape(), o.gamma.shape(), "{}", o.model.name);
        assert!((g - &o.gamma).amax() < 1e-12, "{}", o.model.name);
        let m1 = o.model.m1();
        assert_eq!(s.gamma.submatrix(0..m1, 0..m1), ioext_core::matrix::ExprMatrix::identity(m1));
        assert_eq!(s.orders[m1..].to_vec(), o.r2);
        assert!(feasibility_case1(&s).unwrap().feasible, "{}", o.model.name);
    }
}

#[test]
fn controller_never_reads_extra_inputs() {
    for o in linear_oracle_suite() {
        let s = synth_case1(&o.model, &SynthesisOptions::default()).unwrap();
        for e in &s.controller.u_expr {
            assert!(!e.contains_any(&o.model.extra), "{}: {e}", o.model.name);
        }
    }
    let s = synth_case2(&unicycle(H_STAR).unwrap(), &SynthesisOptions::default()).unwrap();
    let mut forbidden = vec![Symbol::new("w")];
    forbidden.extend(s.plant.extra.iter().cloned());
    for e in &s.controller.u_expr {
        assert!(!e.contains_any(&forbidden), "{e}");
    }
}

#[test]
fn schur_condition_agrees_with_gamma_invertibility() {
    for seed in 0..20u64 {
        let degenerate = seed % 2 == 1;
        let m = random_linear_case1(seed, degenerate);
        let s = synth_case1(&m, &SynthesisOptions::default()).unwrap();
        let cert = feasibility_case1(&s).unwrap();
        assert_eq!(cert.feasible, cert.gamma_invertible_at_x0, "seed {seed}");
        assert_eq!(cert.feasible, !degenerate, "seed {seed}");
    }
}

#[test]
fn unicycle_needs_the_singular_case() {
    let m = unicycle(H_STAR).unwrap();
    assert_eq!(recommend_case(&m, None).unwrap(), Case::Singular);
    let rep = vector_relative_degree(&m, Block::Y1, Wrt::U, default_max_order(&m)).unwrap();
    let tr = input_transformation(&rep.a, &m).unwrap();
    assert_eq!(tr.permutation, vec![0, 1]);
    assert_eq!(tr.k1, 1);
    assert!(matches!(synth_case1(&m, &SynthesisOptions::default()), Err(SynthesisError::CaseMismatch(_))));
}

#[test]
fn unicycle_matches_golden_matrices() {
    for h in [H_STAR, ["0", "1", "0"], ["-sin(x)", "cos(x)", "1"], ["x", "1", "cos(x)"]] {
        let m = unicycle(h).unwrap();
        let s = synth_case2(&m, &SynthesisOptions::default()).unwrap();
        let d = s.details.as_ref().unwrap();
        let g = golden_matrices(h).unwrap();
        let mut sampler = PointSampler::new(s.plant.sample_symbols(), &s.plant.nonzero);
        let pairs: Vec<(&Expr, &Expr)> = d
            .n1
            .entries()
            .iter()
            .zip(g.n1.entries())
            .chain(d.n2.entries().iter().zip(g.n2.entries()))
            .chain(d.b1.entries().iter().zip(g.b1.entries()))
            .chain(d.drift.iter().zip(&g.n))
            .chain(s.gamma.entries().iter().zip(g.gamma.entries()))
            .collect();
        for _ in 0..100 {
            let p = sampler.sample();
            for (a, b) in &pairs {
                let (x, y) = (a.eval(&p).unwrap(), b.eval(&p).unwrap());
                assert!(max_rel(x, y) < 1e-10, "{h:?}: {a} vs {b}");
            }
        }
        assert!(d.decomposition.max_deviation < 1e-9, "{h:?}: {}", d.decomposition.max_deviation);
        assert!(s.feasibility.printed_variant.as_ref().unwrap().agrees);
    }
}

#[test]
fn admissible_direction_gives_one_over_speed() {
    let s = synth_case2(&unicycle(H_STAR).unwrap(), &SynthesisOptions::default()).unwrap();
    let cert = feasibility_case2(&s).unwrap();
    let table = ioext_core::symbols::SymbolTable::with_groups(&["u1"], &[], &[]).unwrap();
    let expected = simplify(&parse_expr("1/u1", &table).unwrap());
    assert_eq!(simplify(&(cert.condition.clone() - expected)), Expr::zero(), "{}", cert.condition);
    assert!(cert.feasible);
    assert_relative_eq!(cert.value_at_x0, 1.0, epsilon = 1e-12);

    let bad = synth_case2(&unicycle(["cos(x)", "sin(x)", "0"]).unwrap(), &SynthesisOptions::default()).unwrap();
    let cert = feasibility_case2(&bad).unwrap();
    assert!(cert.identically_zero);
    assert!(!cert.feasible);
    assert!(!cert.gamma_invertible_at_x0);
}

#[test]
fn h3_does_not_change_feasibility() {
    let a = synth_case2(&unicycle(H_STAR).unwrap(), &SynthesisOptions::default()).unwrap();
    let b = synth_case2(&unicycle(["-sin(x)", "cos(x)", "1"]).unwrap(), &SynthesisOptions::default()).unwrap();
    assert_eq!(
        simplify(&(a.feasibility.condition.clone() - b.feasibility.condition.clone())),
        Expr::zero()
    );
}

#[test]
fn roles_swap_in_the_singular_case() {
    let s = synth_case2(&unicycle(H_STAR).unwrap(), &SynthesisOptions::default()).unwrap();
    let rep = role_swap_report(&s).unwrap();
    assert!(rep.extra_inputs_confined_to_y1);
    assert!(rep.virtual_inputs_reach_y2);
    let c1 = synth_case1(&linear_oracle_suite()[1].model, &SynthesisOptions::default()).unwrap();
    assert!(role_swap_report(&c1).is_err());
}

#[test]
fn gamma_block_structure() {
    let s = synth_case2(&unicycle(H_STAR).unwrap(), &SynthesisOptions::default()).unwrap();
    assert_eq!(s.gamma.nrows(), 3);
    assert!(s.gamma.submatrix(2..3, 2..3).is_structurally_zero());
    assert_eq!(s.u_ext_layout.len(), 3);
}

#[test]
fn gains_are_validated() {
    let m = &linear_oracle_suite()[0].model;
    let bad = SynthesisOptions { gains: Some(vec![DMatrix::from_element(1, 1, -1.0)]), ..Default::default() };
    assert!(matches!(synth_case1(m, &bad), Err(SynthesisError::GainNotPd { index: 0 })));
    let wrong = SynthesisOptions { gains: Some(vec![DMatrix::identity(2, 2)]), ..Default::default() };
    assert!(matches!(synth_case1(m, &wrong), Err(SynthesisError::GainShape { .. })));
}

#[test]
fn doc_round_trip_preserves_everything_simulated() {
    for s in [
        synthesize(&unicycle(H_STAR).unwrap(), &SynthesisOptions::default()).unwrap(),
        synthesize(&linear_oracle_suite()[3].model, &SynthesisOptions::default()).unwrap(),
    ] {
        let doc = SynthesisDoc::from_result(&s);
        let text = serde_json::to_string(&doc).unwrap();
        let back: SynthesisDoc = serde_json::from_str(&text).unwrap();
        let r = back.to_result().unwrap();
        assert_eq!(r.gamma, s.gamma);
        assert_eq!(r.phi, s.phi);
        assert_eq!(r.controller.u_expr, s.controller.u_expr);
        assert_eq!(r.output_derivatives, s.output_derivatives);
        assert_eq!(r.plant, s.plant);
        assert_eq!(r.table, s.table);
    }
}
