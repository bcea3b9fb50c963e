//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line with the
//! measured quantity; the process exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ioext_core::expr::{differentiate, parse_expr, simplify, sum, Assignment, Expr};
use ioext_core::lie::{default_max_order, iterated_lie, lie_derivative, vector_relative_degree, Block, SystemModel, Wrt};
use ioext_core::matrix::relative_det;
use ioext_core::models::{
    golden_matrices, linear_oracle_suite, random_linear_case1, rolling_constraint_residual, unicycle, H_STAR,
};
use ioext_core::sampling::PointSampler;
use ioext_core::simulate::{run_closed_loop, step_rk4, trace_metrics, wrap_angle, SimConfig, Signal, Trajectory, WMode};
use ioext_core::symbols::{Symbol, SymbolTable};
use ioext_core::synthesis::{synthesize, Case, SynthesisOptions, SynthesisResult};
use nalgebra::DVector;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn unicycle_synth(h: [&str; 3]) -> SynthesisResult {
    synthesize(&unicycle(h).unwrap(), &SynthesisOptions::default()).unwrap()
}

fn golden_agreement() -> Outcome {
    let start = Instant::now();
    let hs = [H_STAR, ["0", "1", "0"], ["-sin(x)", "cos(x)", "1"], ["x", "1", "cos(x)"]];
    let mut worst = 0.0f64;
    let mut samples = 0;
    for h in hs {
        let model = unicycle(h).unwrap();
        let s = synthesize(&model, &SynthesisOptions::default()).unwrap();
        let d = s.details.as_ref().expect("case-2 details");
        let a1 = vector_relative_degree(&model, Block::Y1, Wrt::U, default_max_order(&model)).unwrap().a;
        let g = golden_matrices(h).unwrap();
        let mut pairs: Vec<(&Expr, &Expr)> = a1.entries().iter().zip(g.a1.entries()).collect();
        pairs.extend(d.n1.entries().iter().zip(g.n1.entries()));
        pairs.extend(d.n2.entries().iter().zip(g.n2.entries()));
        pairs.extend(s.gamma.entries().iter().zip(g.gamma.entries()));
        pairs.push((&s.feasibility.condition, &g.lambda));
        let mut sampler = PointSampler::with_seed(s.plant.sample_symbols(), &s.plant.nonzero, 101);
        let u1 = Symbol::new("u1");
        let mut taken = 0;
        while taken < 100 {
            let p = sampler.sample();
            if p[&u1].abs() <= 0.1 {
                continue;
            }
            taken += 1;
            for (a, b) in &pairs {
                worst = worst.max(rel_err(a.eval(&p).unwrap(), b.eval(&p).unwrap()));
            }
        }
        samples += taken;
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && within(elapsed, 5.0),
        format!("max rel err {worst:.2e} over {samples} states, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn admissible_direction() -> Outcome {
    let start = Instant::now();
    let good = unicycle_synth(H_STAR);
    let table = SymbolTable::with_groups(&["u1"], &[], &[]).unwrap();
    let one_over_u1 = parse_expr("1/u1", &table).unwrap();
    let is_reciprocal = simplify(&(good.feasibility.condition.clone() - one_over_u1)).is_zero();
    let bad = unicycle_synth(["cos(x)", "sin(x)", "0"]);
    let elapsed = start.elapsed();
    let pass = is_reciprocal
        && good.feasibility.feasible
        && bad.feasibility.identically_zero
        && !bad.feasibility.feasible
        && within(elapsed, 1.0);
    outcome(
        pass,
        format!(
            "h*: `{}` feasible={}; (cos, sin, 0): `{}` feasible={}; {:.2}s",
            good.feasibility.condition,
            good.feasibility.feasible,
            bad.feasibility.condition,
            bad.feasibility.feasible,
            elapsed.as_secs_f64()
        ),
    )
}

fn schur_equivalence() -> Outcome {
    let mut disagreements = 0;
    let mut singular = 0;
    for seed in 0..50u64 {
        let model = random_linear_case1(1000 + seed, seed % 3 == 0);
        let s = synthesize(&model, &SynthesisOptions { case: Some(Case::Regular), ..Default::default() }).unwrap();
        let op = model.operating_assignment();
        let gamma = s.gamma.eval(&op).unwrap();
        let gamma_invertible = relative_det(&gamma).abs() > 1e-9;
        let schur_nonzero = s.feasibility.condition.eval(&op).unwrap().abs() > 1e-9;
        if gamma_invertible != schur_nonzero {
            disagreements += 1;
        }
        if !schur_nonzero {
            singular += 1;
        }
    }
    outcome(disagreements == 0, format!("{disagreements} disagreements over 50 systems ({singular} singular)"))
}

/// Differentiates each composite output along the closed loop until the
/// outer input appears, then checks `y^(ρ) = v` for `u_ext = Γ⁻¹(v − φ)`.
fn exact_linearization_error(s: &SynthesisResult, seed: u64) -> Result<f64, String> {
    let plant = &s.plant;
    let m1 = s.m1();
    let control: BTreeMap<Symbol, Expr> =
        s.controller.inputs.iter().cloned().zip(s.controller.u_expr.iter().cloned()).collect();

    let mut coords: Vec<Symbol> = plant.state.clone();
    let mut field: Vec<Expr> = plant.closed_field().iter().map(|e| simplify(&e.substitute(&control))).collect();
    let chain: Vec<Symbol> = s.reference_layout.iter().chain(&s.u_ext_layout[..m1]).cloned().collect();
    for (i, r) in s.reference_layout.iter().enumerate() {
        coords.push(r.clone());
        field.push(Expr::Sym(chain[i + m1].clone()));
    }
    let total = |e: &Expr| {
        let terms = coords
            .iter()
            .zip(&field)
            .filter(|(c, _)| e.contains(c))
            .map(|(c, f)| differentiate(e, c) * f.clone())
            .collect();
        simplify(&sum(terms))
    };

    let mut top = Vec::new();
    for (j, y) in plant.outputs().iter().enumerate() {
        let mut e = simplify(&y.substitute(&control));
        for k in 0..s.orders[j] {
            if e.contains_any(&s.u_ext_layout) {
                return Err(format!("output {j} sees the outer input at order {k}"));
            }
            e = total(&e);
        }
        top.push(e);
    }

    let mut sampler = PointSampler::with_seed(s.table.iter().map(|(x, _)| x.clone()), &plant.nonzero, seed);
    let mut worst = 0.0f64;
    let mut taken = 0;
    let mut draws = 0;
    while taken < 50 {
        draws += 1;
        if draws > 5000 {
            return Err("could not find 50 non-singular states".into());
        }
        let p = sampler.sample();
        let Ok(gamma) = s.gamma.eval(&p) else { continue };
        let Ok(phi) = s.phi.iter().map(|e| e.eval(&p)).collect::<Result<Vec<_>, _>>() else { continue };
        let svd = gamma.clone().svd(false, false);
        if svd.singular_values.max() / svd.singular_values.min() > 1e6 {
            continue;
        }
        let v = DVector::from_iterator(phi.len(), (0..phi.len()).map(|i| ((i + 1) as f64 * 0.7 + taken as f64).sin()));
        let Some(u_ext) = gamma.lu().solve(&(&v - DVector::from_vec(phi))) else { continue };
        let mut q: Assignment = p.clone();
        for (sym, val) in s.u_ext_layout.iter().zip(u_ext.iter()) {
            q.insert(sym.clone(), *val);
        }
        let Ok(ys) = top.iter().map(|e| e.eval(&q)).collect::<Result<Vec<_>, _>>() else { continue };
        for (y, target) in ys.iter().zip(v.iter()) {
            worst = worst.max(rel_err(*y, *target));
        }
        taken += 1;
    }
    Ok(worst)
}

fn exact_linearization() -> Outcome {
    let mut systems: Vec<(String, SynthesisResult)> = vec![
        ("unicycle h*".into(), unicycle_synth(H_STAR)),
        ("unicycle (x, 1, cos x)".into(), unicycle_synth(["x", "1", "cos(x)"])),
    ];
    for o in linear_oracle_suite() {
        systems.push((o.model.name.clone(), synthesize(&o.model, &SynthesisOptions::default()).unwrap()));
    }
    systems.push(("random linear".into(), synthesize(&random_linear_case1(7, false), &SynthesisOptions::default()).unwrap()));
    let cases: BTreeSet<u8> = systems.iter().map(|(_, s)| s.case.number()).collect();
    let mut worst = 0.0f64;
    for (i, (name, s)) in systems.iter().enumerate() {
        match exact_linearization_error(s, 500 + i as u64) {
            Ok(e) => worst = worst.max(e),
            Err(msg) => return outcome(false, format!("{name}: {msg}")),
        }
    }
    outcome(
        worst < 1e-8 && cases.len() == 2,
        format!("max rel err {worst:.2e} over {} systems covering cases {cases:?}", systems.len()),
    )
}

fn tracking_reference(with_heading: bool) -> Trajectory {
    Trajectory::new(vec![
        Some(Signal::Sinusoid { amplitude: 0.2, frequency: 1.0, phase: 0.0, offset: 1.0 }),
        Some(Signal::Sinusoid { amplitude: 0.2, frequency: 0.5, phase: 0.0, offset: 0.0 }),
        with_heading.then(|| Signal::Polynomial { coefficients: vec![0.0, 0.05] }),
    ])
}

fn tracking_config(w_mode: WMode) -> SimConfig {
    SimConfig {
        t_final: 10.0,
        dt: 1e-3,
        x0: BTreeMap::from([("x".to_string(), 0.0), ("u1".to_string(), 1.0), ("w".to_string(), 0.0)]),
        w_mode,
        ..Default::default()
    }
}

fn closed_loop_tracking() -> Outcome {
    let s = unicycle_synth(H_STAR);
    let start = Instant::now();
    let trace = match run_closed_loop(&s, &tracking_reference(true), &tracking_config(WMode::Free)) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let m = trace_metrics(&trace);
    outcome(
        m.final_error_norm < 1e-3 && m.linearization_residual < 1e-2 && within(elapsed, 10.0),
        format!(
            "final |e| {:.2e}, linearization residual {:.2e}, {:.2}s",
            m.final_error_norm,
            m.linearization_residual,
            elapsed.as_secs_f64()
        ),
    )
}

fn underactuation_witness() -> Outcome {
    let s = unicycle_synth(H_STAR);
    let trace = match run_closed_loop(&s, &tracking_reference(false), &tracking_config(WMode::Zero)) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let e = trace.error(trace.len() - 1);
    let y1 = (e[0] * e[0] + e[1] * e[1]).sqrt();
    let heading = wrap_angle(e[2]).abs();
    outcome(y1 < 1e-3 && heading > 0.1, format!("y1 error {y1:.2e}, |θ − θ_des| {heading:.3} rad at T"))
}

fn rolling_constraint() -> Outcome {
    let s = unicycle_synth(H_STAR);
    let trace = match run_closed_loop(&s, &tracking_reference(true), &tracking_config(WMode::Zero)) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let res = rolling_constraint_residual(&trace, H_STAR).unwrap();
    let max = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    outcome(max < 1e-6, format!("max residual {max:.2e} over {} samples", res.len()))
}

fn pendulum_corpus_model() -> SystemModel {
    ioext_core::lie::ModelSpec {
        name: "cart_pendulum",
        states: &["x1", "x2", "x3"],
        inputs: &["u"],
        extra: &["w"],
        f: &["x2", "-sin(x1) + x3*cos(x1)", "-x3 + x1*x2"],
        g: &[&["0"], &["1/(2 + cos(x1))"], &["1"]],
        h: &[&["x2^2"], &["0"], &["sin(x3)"]],
        h1: &["x1 + sin(x2)"],
        h2: &["x3*cos(x1)"],
        ..Default::default()
    }
    .build()
    .unwrap()
}

const EXTRA_CORPUS: [&str; 8] = [
    "sin(x1)*x2",
    "x1^2*cos(x3)",
    "1/(1 + x2^2)",
    "x3*sin(x1 - x2)",
    "cos(x1)^3 - x2*x3",
    "(x1 + x3)^2/(2 + sin(x2))",
    "x1*x2*x3 - 0.5*x2^3",
    "sin(cos(x1) + x2*x3)",
];

fn lie_engine_oracle() -> Outcome {
    let mut models: Vec<SystemModel> = Vec::new();
    for h in [H_STAR, ["0", "1", "0"], ["-sin(x)", "cos(x)", "1"], ["x", "1", "cos(x)"]] {
        models.push(unicycle(h).unwrap());
        models.push(unicycle_synth(h).plant);
    }
    models.extend(linear_oracle_suite().into_iter().map(|o| o.model));
    models.extend((0..4).map(|seed| random_linear_case1(seed, seed % 2 == 1)));
    models.push(pendulum_corpus_model());

    let mut count = 0;
    let mut worst = 0.0f64;
    for (mi, model) in models.iter().enumerate() {
        let field = model.closed_field();
        let mut corpus: Vec<Expr> = Vec::new();
        for y in model.outputs() {
            for k in 0..3 {
                corpus.push(iterated_lie(&y, &field, &model.state, k));
            }
        }
        corpus.extend(field.iter().cloned());
        if model.name == "cart_pendulum" {
            corpus.extend(EXTRA_CORPUS.iter().map(|t| parse_expr(t, &model.table).unwrap()));
        }
        let mut sampler = PointSampler::with_seed(model.sample_symbols(), &model.nonzero, 900 + mi as u64);
        for e in &corpus {
            let lie = lie_derivative(e, &field, &model.state);
            let mut taken = 0;
            let mut draws = 0;
            while taken < 50 && draws < 1000 {
                draws += 1;
                let p = sampler.sample();
                let Ok(dir) = field.iter().map(|f| f.eval(&p)).collect::<Result<Vec<_>, _>>() else { continue };
                let h = 1e-5;
                let shifted = |sign: f64| {
                    let mut q = p.clone();
                    for (s, d) in model.state.iter().zip(&dir) {
                        *q.get_mut(s).unwrap() += sign * h * d;
                    }
                    e.eval(&q)
                };
                let (Ok(plus), Ok(minus), Ok(sym)) = (shifted(1.0), shifted(-1.0), lie.eval(&p)) else { continue };
                let fd = (plus - minus) / (2.0 * h);
                worst = worst.max((fd - sym).abs() / sym.abs().max(1.0));
                taken += 1;
            }
            if taken < 50 {
                return outcome(false, format!("{}: only {taken} valid points for {e}", model.name));
            }
            count += 1;
        }
    }
    outcome(worst < 1e-5, format!("max rel err {worst:.2e} over {count} expressions x 50 points"))
}

fn rk4_order() -> Outcome {
    let run = |dt: f64| {
        let steps = (1.0 / dt).round() as usize;
        let mut x = vec![1.0];
        for k in 0..steps {
            x = step_rk4(
                |_, x, dx| {
                    dx[0] = x[0];
                    Ok(())
                },
                k as f64 * dt,
                &x,
                dt,
                k,
            )
            .unwrap();
        }
        (x[0] - 1f64.exp()).abs()
    };
    let ratio = run(0.02) / run(0.01);
    outcome((12.0..=20.0).contains(&ratio), format!("error ratio {ratio:.2} on x' = x"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let file = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/unicycle.sys");
    let text = std::fs::read_to_string(&file).unwrap().replace("T = 10", "T = 2\nx0_jitter = 0.05");
    let sys = dir.path().join("unicycle.sys");
    std::fs::write(&sys, text).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ioext"))
            .args(["simulate", sys.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "42"])
            .output()
            .expect("binary runs")
            .status;
        (status.code(), std::fs::read(out).unwrap_or_default())
    };
    let (ca, a) = run("a.csv");
    let (cb, b) = run("b.csv");
    let identical = !a.is_empty() && a == b;
    outcome(
        identical && ca == Some(0) && cb == Some(0),
        format!("{} bytes, identical={identical}, exit codes {ca:?}/{cb:?}", a.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("unicycle golden matrices", golden_agreement),
        ("admissible extra-input direction", admissible_direction),
        ("Schur complement equivalence", schur_equivalence),
        ("exact linearization y^(rho) = v", exact_linearization),
        ("closed-loop tracking", closed_loop_tracking),
        ("underactuation witness (w = 0)", underactuation_witness),
        ("pure rolling constraint (w = 0)", rolling_constraint),
        ("Lie derivatives vs finite differences", lie_engine_oracle),
        ("RK4 convergence order", rk4_order),
        ("deterministic simulate", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
