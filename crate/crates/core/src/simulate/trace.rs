use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ode::central_difference;
use crate::symbols::Category;
use crate::synthesis::SynthesisResult;

use super::{wrap_angle, WMode};

pub const TRACE_SCHEMA: &str = "ioext-trace/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema: String,
    pub model: String,
    pub case: u8,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub seed: u64,
    pub w_mode: WMode,
    pub gains: Vec<Vec<Vec<f64>>>,
    pub l: Vec<Vec<f64>>,
    /// Initial plant state actually used.
    pub x0: Vec<(String, f64)>,
}

/// Column ranges of each recorded group; `err_norm` is the last column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Groups {
    pub x: Range<usize>,
    pub xi: Range<usize>,
    pub w: Range<usize>,
    pub r: Range<usize>,
    pub u: Range<usize>,
    pub uext: Range<usize>,
    pub y: Range<usize>,
    pub ydes: Range<usize>,
    pub names: Vec<String>,
}

impl Groups {
    pub(crate) fn layout(synth: &SynthesisResult) -> Groups {
        let plant = &synth.plant;
        let is_w = |s: &crate::symbols::Symbol| plant.table.category(s) == Some(Category::ExtraInput);
        let mut names: Vec<String> = Vec::new();
        let mut take = |list: Vec<String>| {
            let start = names.len();
            names.extend(list);
            start..names.len()
        };
        let x = take(
            plant
                .state
                .iter()
                .filter(|s| !is_w(s) && !synth.controller.delayed.contains(s))
                .map(|s| s.to_string())
                .collect(),
        );
        let xi = take(synth.controller.delayed.iter().map(|s| s.to_string()).collect());
        let w_states: Vec<String> = plant.state.iter().filter(|s| is_w(s)).map(|s| s.to_string()).collect();
        let w = take(if w_states.is_empty() { plant.extra.iter().map(|s| s.to_string()).collect() } else { w_states });
        let r = take(synth.reference_layout.iter().map(|s| s.to_string()).collect());
        let u = take(plant.inputs.iter().map(|s| s.to_string()).collect());
        let uext = take(synth.u_ext_layout.iter().map(|s| format!("uext_{s}")).collect());
        let m = synth.m1() + synth.m2();
        let y = take((1..=m).map(|j| format!("y{j}")).collect());
        let ydes = take((1..=m).map(|j| format!("ydes{j}")).collect());
        names.push("err_norm".to_string());
        Groups { x, xi, w, r, u, uext, y, ydes, names }
    }
}

/// Samples on a uniform grid, one row of all columns per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub meta: TraceMeta,
    pub groups: Groups,
    /// Column names after `t`, in order.
    pub columns: Vec<String>,
    pub t: Vec<f64>,
    pub data: Vec<Vec<f64>>,
    /// Commanded `v` per sample; NaN marks unregulated channels.
    pub v: Vec<Vec<f64>>,
    pub orders: Vec<usize>,
    pub angular: Vec<usize>,
}

impl SimulationTrace {
    pub(crate) fn new(meta: TraceMeta, groups: Groups, orders: Vec<usize>, angular: Vec<usize>) -> Self {
        SimulationTrace {
            meta,
            columns: groups.names.clone(),
            groups,
            t: vec![],
            data: vec![],
            v: vec![],
            orders,
            angular,
        }
    }

    pub(crate) fn push(&mut self, t: f64, row: Vec<f64>, v: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.t.push(t);
        self.data.push(row);
        self.v.push(v);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.data.iter().map(|r| r[i]).collect())
    }

    pub fn group(&self, range: &Range<usize>, k: usize) -> &[f64] {
        &self.data[k][range.clone()]
    }

    pub fn outputs(&self, k: usize) -> &[f64] {
        self.group(&self.groups.y, k)
    }

    pub fn desired(&self, k: usize) -> &[f64] {
        self.group(&self.groups.ydes, k)
    }

    /// `y_des − y` at sample `k`, angles wrapped.
    pub fn error(&self, k: usize) -> Vec<f64> {
        self.desired(k)
            .iter()
            .zip(self.outputs(k))
            .enumerate()
            .map(|(j, (d, y))| if self.angular.contains(&j) { wrap_angle(d - y) } else { d - y })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# ioext-trace v1\n");
        out.push('t');
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (t, row) in self.t.iter().zip(&self.data) {
            write!(out, "{t}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut columns = vec![json!({ "name": "t", "values": self.t })];
        for (i, name) in self.columns.iter().enumerate() {
            let values: Vec<Value> = self.data.iter().map(|r| finite(r[i])).collect();
            columns.push(json!({ "name": name, "values": values }));
        }
        json!({
            "schema": TRACE_SCHEMA,
            "metadata": self.meta,
            "columns": columns,
        })
    }
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub samples: usize,
    pub max_error: Vec<f64>,
    pub final_error: Vec<f64>,
    pub initial_error_norm: f64,
    pub final_error_norm: f64,
    /// Time after which `‖e‖` stays within 2% of its peak.
    pub settling_time: f64,
    /// Largest normalized mismatch between numerically differentiated
    /// outputs and the commanded `v`.
    pub linearization_residual: f64,
    pub max_abs_reference: f64,
}

/// Summary statistics of a trace.
pub fn trace_metrics(trace: &SimulationTrace) -> TraceMetrics {
    let n = trace.len();
    let m = trace.groups.y.len();
    let errors: Vec<Vec<f64>> = (0..n).map(|k| trace.error(k)).collect();
    let norms: Vec<f64> = errors.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut max_error = vec![0.0f64; m];
    for e in &errors {
        for (mx, v) in max_error.iter_mut().zip(e) {
            *mx = mx.max(v.abs());
        }
    }
    let t_final = trace.meta.t_final;
    let peak = norms.iter().copied().fold(0.0f64, f64::max);
    let settling_time = if n < 2 {
        t_final
    } else if peak <= 1e-12 {
        0.0
    } else {
        let band = 0.02 * peak;
        match norms.iter().rposition(|&e| e > band) {
            None => 0.0,
            Some(k) if k + 1 < n => trace.t[k + 1],
            Some(_) => t_final,
        }
    };

    let dt = trace.meta.dt;
    let mut residual = 0.0f64;
    for j in 0..m.min(trace.orders.len()) {
        let rho = trace.orders[j];
        let yj: Vec<f64> = (0..n).map(|k| trace.outputs(k)[j]).collect();
        for k in rho..n.saturating_sub(rho) {
            let v = trace.v[k][j];
            if !v.is_finite() {
                continue;
            }
            let samples: Vec<f64> = (0..=rho).map(|i| yj[k + rho - 2 * i]).collect();
            let d = central_difference(&samples, rho, dt);
            residual = residual.max((d - v).abs() / v.abs().max(1.0));
        }
    }
    let max_abs_reference = trace
        .data
        .iter()
        .flat_map(|r| r[trace.groups.r.clone()].iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max);

    TraceMetrics {
        samples: n,
        max_error,
        final_error: errors.last().cloned().unwrap_or_default(),
        initial_error_norm: norms.first().copied().unwrap_or(0.0),
        final_error_norm: norms.last().copied().unwrap_or(0.0),
        settling_time,
        linearization_residual: residual,
        max_abs_reference,
    }
}
