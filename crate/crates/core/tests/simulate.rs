use std::collections::BTreeMap;

use ioext_core::error::SimError;
use ioext_core::expr::Assignment;
use ioext_core::models::{linear_oracle_suite, rolling_constraint_residual, unicycle, H_STAR};
use ioext_core::simulate::{
    outer_control, run_closed_loop, step_rk4, trace_metrics, wrap_angle, SimConfig, Signal, Trajectory, WMode,
};
use ioext_core::symbols::Symbol;
use ioext_core::synthesis::{synthesize, SynthesisOptions, SynthesisResult};
use nalgebra::DMatrix;

fn unicycle_synth(h: [&str; 3]) -> SynthesisResult {
    synthesize(&unicycle(h).unwrap(), &SynthesisOptions::default()).unwrap()
}

fn tracking_reference() -> Trajectory {
    Trajectory::new(vec![
        Some(Signal::Sinusoid { amplitude: 0.2, frequency: 1.0, phase: 0.0, offset: 1.0 }),
        Some(Signal::Sinusoid { amplitude: 0.2, frequency: 0.5, phase: 0.0, offset: 0.0 }),
        Some(Signal::Polynomial { coefficients: vec![0.0, 0.05] }),
    ])
}

fn config(t_final: f64) -> SimConfig {
    SimConfig {
        t_final,
        x0: BTreeMap::from([("x".to_string(), 0.0), ("u1".to_string(), 1.0), ("w".to_string(), 0.0)]),
        ..Default::default()
    }
}

#[test]
fn unicycle_tracks_sinusoid_and_ramp() {
    let s = unicycle_synth(H_STAR);
    let trace = run_closed_loop(&s, &tracking_reference(), &config(10.0)).unwrap();
    let m = trace_metrics(&trace);
    println!("{m:?}");
    assert!(m.final_error_norm < 1e-3, "{}", m.final_error_norm);
    assert!(m.linearization_residual < 1e-2, "{}", m.linearization_residual);
    assert_eq!(trace.len(), 10_001);
}

#[test]
fn unicycle_constant_reference_converges_tightly() {
    let s = unicycle_synth(H_STAR);
    let traj = Trajectory::new(vec![
        Some(Signal::Constant { value: 0.8 }),
        Some(Signal::Constant { value: 0.3 }),
        Some(Signal::Constant { value: 0.4 }),
    ]);
    let trace = run_closed_loop(&s, &traj, &config(10.0)).unwrap();
    let m = trace_metrics(&trace);
    println!("{m:?}");
    assert!(m.final_error_norm < 1e-4, "{}", m.final_error_norm);
}

#[test]
fn equilibrium_reference_stays_put() {
    let s = unicycle_synth(H_STAR);
    let trace = run_closed_loop(&s, &Trajectory::default(), &config(2.0)).unwrap();
    for k in 0..trace.len() {
        assert!(trace.data[k].last().unwrap().abs() < 1e-8);
    }
    assert_eq!(trace_metrics(&trace).settling_time, 0.0);
}

#[test]
fn infeasible_direction_stops_at_first_step() {
    let s = unicycle_synth(["cos(x)", "sin(x)", "0"]);
    match run_closed_loop(&s, &tracking_reference(), &config(1.0)) {
        Err(SimError::NearSingular { t, .. }) => assert_eq!(t, 0.0),
        other => panic!("expected a near-singular error, got {other:?}"),
    }
}

#[test]
fn vanishing_speed_is_rejected() {
    let s = unicycle_synth(H_STAR);
    let state: Assignment = [("x", 0.0), ("u1", 1e-9), ("w", 0.0), ("r1", 0.0), ("r2", 0.0)]
        .iter()
        .map(|(k, v)| (Symbol::new(k), *v))
        .collect();
    let desired = vec![vec![0.0, 0.0]; 3];
    let err = outer_control(&s, &DMatrix::zeros(0, 0), &state, &desired).unwrap_err();
    assert!(matches!(err, SimError::NearSingular { .. }), "{err:?}");
}

#[test]
fn outer_law_is_zero_at_rest() {
    let s = unicycle_synth(H_STAR);
    let state: Assignment = [("x", 0.3), ("u1", 1.0), ("w", 0.0), ("r1", 1.0f64 * 0.3f64.cos()), ("r2", 0.3f64.sin())]
        .iter()
        .map(|(k, v)| (Symbol::new(k), *v))
        .collect();
    let desired = vec![vec![0.3f64.cos(), 0.0], vec![0.3f64.sin(), 0.0], vec![0.3, 0.0]];
    let u = outer_control(&s, &DMatrix::zeros(0, 0), &state, &desired).unwrap();
    assert!(u.amax() < 1e-12, "{u}");
}

#[test]
fn outer_law_matches_hand_solve() {
    // At θ = 0, u1 = 1, w = 0 with h*: Γ = [[1, 0, 0], [0, 1, 1], [0, 1, 0]], φ = 0 when r = y1.
    let s = unicycle_synth(H_STAR);
    let state: Assignment = [("x", 0.0), ("u1", 1.0), ("w", 0.0), ("r1", 1.0), ("r2", 0.0)]
        .iter()
        .map(|(k, v)| (Symbol::new(k), *v))
        .collect();
    let desired = vec![vec![1.1, 0.0], vec![-0.2, 0.0], vec![0.05, 0.0]];
    let u = outer_control(&s, &DMatrix::zeros(0, 0), &state, &desired).unwrap();
    let v = [5.0 * 0.1, 5.0 * -0.2, 5.0 * 0.05];
    let expected = [v[0], v[2], v[1] - v[2]];
    for i in 0..3 {
        assert!((u[i] - expected[i]).abs() < 1e-12, "{u}");
    }
}

#[test]
fn w_forced_to_zero_leaves_heading_uncontrolled() {
    let s = unicycle_synth(H_STAR);
    let cfg = SimConfig { w_mode: WMode::Zero, ..config(10.0) };
    let trace = run_closed_loop(&s, &tracking_reference(), &cfg).unwrap();
    let k = trace.len() - 1;
    let e = trace.error(k);
    let y1_err = (e[0] * e[0] + e[1] * e[1]).sqrt();
    println!("y1 err {y1_err}, heading err {}", e[2]);
    assert!(y1_err < 1e-3);
    assert!(wrap_angle(e[2]).abs() > 0.1);
    let w = trace.column("w").unwrap();
    assert!(w.iter().all(|v| *v == 0.0));
}

#[test]
fn pure_rolling_without_extra_input() {
    let s = unicycle_synth(H_STAR);
    let cfg = SimConfig { w_mode: WMode::Zero, ..config(10.0) };
    let trace = run_closed_loop(&s, &tracking_reference(), &cfg).unwrap();
    let res = rolling_constraint_residual(&trace, H_STAR).unwrap();
    let max = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(max < 1e-6, "{max}");

    let free = run_closed_loop(&s, &tracking_reference(), &config(10.0)).unwrap();
    let res = rolling_constraint_residual(&free, H_STAR).unwrap();
    let w = free.column("w").unwrap();
    for (r, w) in res.iter().zip(&w) {
        assert!((r - w).abs() < 1e-9);
    }
    assert!(res.iter().any(|r| r.abs() > 1e-3));
}

#[test]
fn traces_are_deterministic() {
    let s = unicycle_synth(H_STAR);
    let cfg = SimConfig { x0_jitter: 0.05, seed: 42, ..config(1.0) };
    let a = run_closed_loop(&s, &tracking_reference(), &cfg).unwrap();
    let b = run_closed_loop(&s, &tracking_reference(), &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let c = run_closed_loop(&s, &tracking_reference(), &SimConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn csv_layout() {
    let s = unicycle_synth(H_STAR);
    let trace = run_closed_loop(&s, &tracking_reference(), &config(0.01)).unwrap();
    let csv = trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# ioext-trace v1"));
    assert_eq!(
        lines.next(),
        Some("t,x,u1,w,r1,r2,u1_dot,u2,uext_r1_d1,uext_r2_d1,uext_w_dot,y1,y2,y3,ydes1,ydes2,ydes3,err_norm")
    );
    assert_eq!(lines.count(), 11);
}

#[test]
fn case1_oracles_track_in_closed_loop() {
    for o in linear_oracle_suite() {
        let s = synthesize(&o.model, &SynthesisOptions::default()).unwrap();
        let m = s.m1() + s.m2();
        let traj = Trajectory::new((0..m).map(|j| Some(Signal::Sinusoid {
            amplitude: 0.5,
            frequency: 0.7,
            phase: j as f64,
            offset: 0.2,
        })).collect());
        let trace = run_closed_loop(&s, &traj, &SimConfig { t_final: 8.0, ..Default::default() }).unwrap();
        let metrics = trace_metrics(&trace);
        println!("{}: {metrics:?}", o.model.name);
        assert!(metrics.final_error_norm < 1e-3, "{}: {}", o.model.name, metrics.final_error_norm);
        assert!(metrics.linearization_residual < 1e-2, "{}: {}", o.model.name, metrics.linearization_residual);
    }
}

#[test]
fn errors_decay_from_random_starts() {
    use rand::{Rng, SeedableRng};
    let s = unicycle_synth(H_STAR);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let x0 = BTreeMap::from([
            ("x".to_string(), rng.random_range(-1.0..1.0)),
            ("u1".to_string(), rng.random_range(0.5..1.5)),
            ("w".to_string(), rng.random_range(-0.3..0.3)),
        ]);
        let traj = Trajectory::new(vec![
            Some(Signal::Constant { value: 1.0 }),
            Some(Signal::Constant { value: 0.2 }),
            Some(Signal::Constant { value: 0.3 }),
        ]);
        let trace = run_closed_loop(&s, &traj, &SimConfig { t_final: 2.0, x0, ..Default::default() }).unwrap();
        let m = trace_metrics(&trace);
        assert!(m.final_error_norm < 0.01 * m.initial_error_norm, "{m:?}");
    }
}

#[test]
fn one_sample_trace_reports_horizon_as_settling_time() {
    let s = unicycle_synth(H_STAR);
    let trace = run_closed_loop(&s, &tracking_reference(), &config(0.0)).unwrap();
    assert_eq!(trace.len(), 1);
    let m = trace_metrics(&trace);
    assert_eq!(m.settling_time, 0.0_f64.max(trace.meta.t_final));
}

#[test]
fn rk4_global_error_is_fourth_order() {
    let run = |dt: f64| {
        let steps = (1.0 / dt).round() as usize;
        let mut x = vec![1.0];
        for k in 0..steps {
            x = step_rk4(|_, x, dx| { dx[0] = x[0]; Ok(()) }, k as f64 * dt, &x, dt, k).unwrap();
        }
        (x[0] - 1f64.exp()).abs()
    };
    let ratio = run(0.02) / run(0.01);
    assert!((12.0..=20.0).contains(&ratio), "{ratio}");
}
