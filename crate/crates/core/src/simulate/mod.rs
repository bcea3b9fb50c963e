//! Closed-loop integration of a synthesized two-layer controller, desired
//! trajectories, and trace analytics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::expr::{Assignment, CompiledExpr, Expr};
use crate::matrix::condition_number;
use crate::symbols::{Category, Symbol};
use crate::synthesis::SynthesisResult;

mod trace;
mod trajectory;

pub use crate::ode::rk4_step as step_rk4;
pub use trace::{trace_metrics, Groups, SimulationTrace, TraceMeta, TraceMetrics, TRACE_SCHEMA};
pub use trajectory::{CubicSpline, Signal, Trajectory};

/// Declared nonzero coordinates closer to zero than this abort the run.
pub const SINGULAR_COORDINATE_TOL: f64 = 1e-3;
/// `Γ` with a larger 2-norm condition number counts as singular.
pub const MAX_CONDITION: f64 = 1e8;
/// Default diagonal of the outer gain `L`.
pub const DEFAULT_OUTER_GAIN: f64 = 5.0;

/// How the extra-input channel of `u_ext` is driven.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WMode {
    /// Solve the full composite law.
    #[default]
    Free,
    /// Hold the extra-input channel at zero and regulate `y1` only, so the
    /// internal controller acts alone.
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub t_final: f64,
    pub dt: f64,
    /// Outer gain over the stacked outputs; empty means `DEFAULT_OUTER_GAIN * I`.
    pub l: DMatrix<f64>,
    /// Initial plant-state values by name; others start at the operating point.
    pub x0: BTreeMap<String, f64>,
    /// Standard deviation of a seeded Gaussian perturbation of the initial state.
    pub x0_jitter: f64,
    pub seed: u64,
    pub w_mode: WMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_final: 10.0,
            dt: 1e-3,
            l: DMatrix::zeros(0, 0),
            x0: BTreeMap::new(),
            x0_jitter: 0.0,
            seed: 0,
            w_mode: WMode::Free,
        }
    }
}

/// Result of one evaluation of the outer law.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterStep {
    pub u_ext: DVector<f64>,
    /// Commanded output derivatives `v`; NaN for channels left unregulated.
    pub v: DVector<f64>,
}

fn compile_all(exprs: &[Expr], layout: &[Symbol]) -> Result<Vec<CompiledExpr>, SimError> {
    exprs
        .iter()
        .map(|e| e.compile(layout))
        .collect::<Result<_, _>>()
        .map_err(|source| SimError::Eval { t: 0.0, source })
}

fn eval_all(c: &[CompiledExpr], slots: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
    c.iter().map(|e| e.eval(slots).map_err(|source| SimError::Eval { t, source })).collect()
}

/// A synthesis result compiled for fast numeric evaluation.
///
/// The simulation state is `z = (plant state, reference chain)`; the
/// reference chain holds `r^(i)` below the top order, which `u_ext` drives.
pub struct ClosedLoop<'a> {
    pub synth: &'a SynthesisResult,
    l: DMatrix<f64>,
    ns: usize,
    nr: usize,
    m1: usize,
    controller: Vec<CompiledExpr>,
    field: Vec<CompiledExpr>,
    outputs: Vec<CompiledExpr>,
    phi: Vec<CompiledExpr>,
    gamma: Vec<CompiledExpr>,
    lower: Vec<Vec<CompiledExpr>>,
    /// Positions of declared nonzero symbols in `(state, u, extra)`.
    nonzero: Vec<(String, usize)>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(synth: &'a SynthesisResult, l: &DMatrix<f64>) -> Result<Self, SimError> {
        let plant = &synth.plant;
        let m = synth.m1() + synth.m2();
        let l = if l.is_empty() { DMatrix::identity(m, m) * DEFAULT_OUTER_GAIN } else { l.clone() };
        if l.nrows() != m || l.ncols() != m {
            return Err(SimError::Config(format!("L must be {m}x{m}, got {}x{}", l.nrows(), l.ncols())));
        }
        if !crate::matrix::is_spd(&l, crate::synthesis::GAIN_EIG_TOL) {
            return Err(SimError::Config("L must be symmetric positive definite".into()));
        }
        let mut z_layout = plant.state.clone();
        z_layout.extend(synth.reference_layout.iter().cloned());
        let mut zu_layout = z_layout.clone();
        zu_layout.extend(synth.u_ext_layout.iter().cloned());
        let mut sie_layout = plant.state.clone();
        sie_layout.extend(plant.inputs.iter().cloned());
        sie_layout.extend(plant.extra.iter().cloned());
        let nonzero = plant
            .nonzero
            .iter()
            .filter_map(|s| sie_layout.iter().position(|x| x == s).map(|i| (s.to_string(), i)))
            .collect();
        Ok(ClosedLoop {
            synth,
            ns: plant.n(),
            nr: synth.reference_layout.len(),
            m1: synth.m1(),
            controller: compile_all(&synth.controller.u_expr, &zu_layout)?,
            field: compile_all(&plant.closed_field(), &sie_layout)?,
            outputs: compile_all(&plant.outputs(), &sie_layout)?,
            phi: compile_all(&synth.phi, &z_layout)?,
            gamma: compile_all(synth.gamma.entries(), &z_layout)?,
            lower: synth
                .output_derivatives
                .iter()
                .map(|d| compile_all(d, &plant.state))
                .collect::<Result<_, _>>()?,
            nonzero,
            l,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.ns + self.nr
    }

    pub fn outer_gain(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Plant inputs produced by the internal controller.
    pub fn controller_output(&self, t: f64, z: &[f64], u_ext: &[f64]) -> Result<Vec<f64>, SimError> {
        let slots: Vec<f64> = z.iter().chain(u_ext).copied().collect();
        eval_all(&self.controller, &slots, t)
    }

    fn plant_slots(&self, z: &[f64], u: &[f64], u_ext: &[f64]) -> Vec<f64> {
        z[..self.ns].iter().chain(u).chain(&u_ext[self.m1..]).copied().collect()
    }

    /// Time derivative of `z` with `u_ext` held.
    pub fn vector_field(&self, t: f64, z: &[f64], u_ext: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        let u = self.controller_output(t, z, u_ext)?;
        let slots = self.plant_slots(z, &u, u_ext);
        for (o, c) in out[..self.ns].iter_mut().zip(&self.field) {
            *o = c.eval(&slots).map_err(|source| SimError::Eval { t, source })?;
        }
        let m1 = self.m1;
        for i in 0..self.nr {
            out[self.ns + i] = if i + m1 < self.nr { z[self.ns + i + m1] } else { u_ext[i + m1 - self.nr] };
        }
        Ok(())
    }

    /// Stacked outputs `(y1, y2)`.
    pub fn outputs(&self, t: f64, z: &[f64], u_ext: &[f64]) -> Result<Vec<f64>, SimError> {
        let u = self.controller_output(t, z, u_ext)?;
        eval_all(&self.outputs, &self.plant_slots(z, &u, u_ext), t)
    }

    fn check_coordinates(&self, t: f64, z: &[f64], u: &[f64], u_ext: &[f64]) -> Result<(), SimError> {
        let slots = self.plant_slots(z, u, u_ext);
        for (name, i) in &self.nonzero {
            if slots[*i].abs() < SINGULAR_COORDINATE_TOL {
                return Err(SimError::SingularCoordinate { name: name.clone(), value: slots[*i], t });
            }
        }
        Ok(())
    }

    /// `u_ext = Γ⁻¹(v − φ)` with `v` built from the desired output
    /// derivatives `desired[j][k] = y_des_j^(k)`, `k ≤ ρ_j`.
    pub fn outer_control(
        &self,
        t: f64,
        z: &[f64],
        desired: &[Vec<f64>],
        w_mode: WMode,
    ) -> Result<OuterStep, SimError> {
        let synth = self.synth;
        let m = synth.m1() + synth.m2();
        let orders = &synth.orders;
        let state = &z[..self.ns];
        let angular = &synth.plant.angular;
        // e[j][k] = y_des^(k) − y^(k) for k < ρ_j.
        let mut e: Vec<Vec<f64>> = Vec::with_capacity(m);
        for j in 0..m {
            let mut row = Vec::with_capacity(orders[j]);
            for k in 0..orders[j] {
                let y = self.lower[j][k].eval(state).map_err(|source| SimError::Eval { t, source })?;
                let mut d = desired[j][k] - y;
                if k == 0 && angular.contains(&j) {
                    d = wrap_angle(d);
                }
                row.push(d);
            }
            e.push(row);
        }
        let all_first = orders.iter().all(|&r| r == 1);
        let mut v = DVector::zeros(m);
        for j in 0..m {
            let rho = orders[j];
            v[j] = desired[j][rho];
            if all_first {
                v[j] += (0..m).map(|i| self.l[(j, i)] * e[i][0]).sum::<f64>();
            } else {
                let ell = self.l[(j, j)];
                for (k, ek) in e[j].iter().enumerate() {
                    v[j] += binomial(rho, k) * ell.powi((rho - k) as i32) * ek;
                }
            }
        }
        let phi = DVector::from_vec(eval_all(&self.phi, z, t)?);
        let g = DMatrix::from_row_slice(m, m, &eval_all(&self.gamma, z, t)?);
        let rows = match w_mode {
            WMode::Free => m,
            WMode::Zero => self.m1,
        };
        let sub = g.view((0, 0), (rows, rows)).into_owned();
        let cond = condition_number(&sub);
        if !(cond <= MAX_CONDITION) {
            return Err(SimError::NearSingular { cond, t, state: z.to_vec() });
        }
        let rhs = (v.rows(0, rows) - phi.rows(0, rows)).into_owned();
        let sol = sub
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SimError::NearSingular { cond: f64::INFINITY, t, state: z.to_vec() })?;
        let mut u_ext = DVector::zeros(m);
        u_ext.rows_mut(0, rows).copy_from(&sol);
        if w_mode == WMode::Zero {
            for j in rows..m {
                v[j] = f64::NAN;
            }
        }
        Ok(OuterStep { u_ext, v })
    }

    /// Initial simulation state: plant values from `x0` (operating point
    /// otherwise) plus the reference chain set to the `y1` derivatives there.
    pub fn initial_state(&self, config: &SimConfig) -> Result<Vec<f64>, SimError> {
        let plant = &self.synth.plant;
        let op = plant.operating_assignment();
        for name in config.x0.keys() {
            if !plant.state.iter().any(|s| s.as_str() == name) {
                return Err(SimError::Config(format!("x0 names `{name}`, which is not a plant state")));
            }
        }
        let mut z: Vec<f64> = plant
            .state
            .iter()
            .map(|s| config.x0.get(s.as_str()).copied().or_else(|| op.get(s).copied()).unwrap_or(0.0))
            .collect();
        if config.x0_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let normal = Normal::new(0.0, config.x0_jitter)
                .map_err(|_| SimError::Config("x0_jitter must be finite and nonnegative".into()))?;
            for v in z.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        let top = self.synth.top_reference_order();
        for i in 0..top {
            for j in 0..self.m1 {
                let v = self.lower[j][i].eval(&z[..self.ns]).map_err(|source| SimError::Eval { t: 0.0, source })?;
                z.push(v);
            }
        }
        Ok(z)
    }
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = d.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// One-shot outer law at a named state: `state` assigns the plant states
/// and reference-chain symbols, `desired[j][k] = y_des_j^(k)`.
pub fn outer_control(
    synth: &SynthesisResult,
    l: &DMatrix<f64>,
    state: &Assignment,
    desired: &[Vec<f64>],
) -> Result<DVector<f64>, SimError> {
    let cl = ClosedLoop::new(synth, l)?;
    let z: Vec<f64> = synth
        .plant
        .state
        .iter()
        .chain(&synth.reference_layout)
        .map(|s| state.get(s).copied().ok_or_else(|| SimError::Config(format!("no value for `{s}`"))))
        .collect::<Result<_, _>>()?;
    Ok(cl.outer_control(0.0, &z, desired, WMode::Free)?.u_ext)
}

/// Integrates the plant, the reference chain and the internal controller
/// under the outer law, holding `u_ext` over each step.
pub fn run_closed_loop(
    synth: &SynthesisResult,
    trajectory: &Trajectory,
    config: &SimConfig,
) -> Result<SimulationTrace, SimError> {
    if !(config.dt > 0.0) || !(config.t_final >= 0.0) {
        return Err(SimError::Config("dt must be positive and T nonnegative".into()));
    }
    let cl = ClosedLoop::new(synth, &config.l)?;
    let m = synth.m1() + synth.m2();
    let steps = (config.t_final / config.dt).round() as usize;
    let mut z = cl.initial_state(config)?;
    let y0 = cl.outputs(0.0, &z, &vec![0.0; m])?;
    let y0: Vec<f64> = (0..m)
        .map(|j| match cl.lower[j].first() {
            Some(c) => c.eval(&z[..cl.ns]).map_err(|source| SimError::Eval { t: 0.0, source }),
            None => Ok(y0[j]),
        })
        .collect::<Result<_, _>>()?;
    let signals = trajectory.resolved(&y0);
    let plant = &synth.plant;

    let groups = Groups::layout(synth);
    let mut trace = SimulationTrace::new(
        TraceMeta {
            schema: TRACE_SCHEMA.to_string(),
            model: plant.name.clone(),
            case: synth.case.number(),
            dt: config.dt,
            t_final: config.t_final,
            steps,
            seed: config.seed,
            w_mode: config.w_mode,
            gains: crate::synthesis::gains_to_rows(&synth.controller.gains),
            l: (0..m).map(|i| cl.outer_gain().row(i).iter().copied().collect()).collect(),
            x0: plant.state.iter().zip(&z).map(|(s, v)| (s.to_string(), *v)).collect(),
        },
        groups,
        synth.orders.clone(),
        plant.angular.iter().copied().collect(),
    );

    let w_states: Vec<usize> = plant
        .state
        .iter()
        .enumerate()
        .filter(|(_, s)| plant.table.category(s) == Some(Category::ExtraInput))
        .map(|(i, _)| i)
        .collect();
    let x_states: Vec<usize> = (0..plant.n())
        .filter(|i| !w_states.contains(i) && !synth.controller.delayed.contains(&plant.state[*i]))
        .collect();
    let xi_states: Vec<usize> = synth
        .controller
        .delayed
        .iter()
        .filter_map(|d| plant.state.iter().position(|s| s == d))
        .collect();

    for k in 0..=steps {
        let t = k as f64 * config.dt;
        let desired: Vec<Vec<f64>> = signals
            .iter()
            .zip(&synth.orders)
            .map(|(s, &rho)| (0..=rho).map(|i| s.eval(t, i)).collect())
            .collect();
        let step = cl.outer_control(t, &z, &desired, config.w_mode)?;
        let u_ext = step.u_ext.as_slice();
        let u = cl.controller_output(t, &z, u_ext)?;
        cl.check_coordinates(t, &z, &u, u_ext)?;
        let y = cl.outputs(t, &z, u_ext)?;

        let mut row = Vec::with_capacity(trace.columns.len());
        row.extend(x_states.iter().map(|&i| z[i]));
        row.extend(xi_states.iter().map(|&i| z[i]));
        if w_states.is_empty() {
            row.extend(&u_ext[cl.m1..]);
        } else {
            row.extend(w_states.iter().map(|&i| z[i]));
        }
        row.extend(&z[cl.ns..]);
        row.extend(&u);
        row.extend(u_ext);
        row.extend(&y);
        let ydes: Vec<f64> = desired.iter().map(|d| d[0]).collect();
        row.extend(&ydes);
        let err: f64 = (0..m)
            .map(|j| {
                let d = ydes[j] - y[j];
                if plant.angular.contains(&j) { wrap_angle(d) } else { d }
            })
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt();
        row.push(err);
        trace.push(t, row, step.v.as_slice().to_vec());

        if k < steps {
            let held = u_ext.to_vec();
            z = step_rk4(|t, x, dx| cl.vector_field(t, x, &held, dx), t, &z, config.dt, k)?;
        }
    }
    Ok(trace)
}
