use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// A scalar desired signal with analytic derivatives of any order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant { value: f64 },
    /// `offset + amplitude * sin(frequency * t + phase)`, frequency in rad/s.
    Sinusoid { amplitude: f64, frequency: f64, phase: f64, offset: f64 },
    /// `c0 + c1 t + c2 t² + …`
    Polynomial { coefficients: Vec<f64> },
    Spline(CubicSpline),
}

impl Signal {
    /// `order`-th time derivative at `t`.
    pub fn eval(&self, t: f64, order: usize) -> f64 {
        match self {
            Signal::Constant { value } => {
                if order == 0 {
                    *value
                } else {
                    0.0
                }
            }
            Signal::Sinusoid { amplitude, frequency, phase, offset } => {
                let arg = frequency * t + phase;
                let scale = amplitude * frequency.powi(order as i32);
                let base = match order % 4 {
                    0 => arg.sin(),
                    1 => arg.cos(),
                    2 => -arg.sin(),
                    _ => -arg.cos(),
                };
                if order == 0 {
                    offset + scale * base
                } else {
                    scale * base
                }
            }
            Signal::Polynomial { coefficients } => polynomial_derivative(coefficients, t, order),
            Signal::Spline(s) => s.eval(t, order),
        }
    }
}

fn polynomial_derivative(c: &[f64], t: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for k in (order..c.len()).rev() {
        let falling: f64 = ((k - order + 1)..=k).map(|v| v as f64).product();
        acc = acc * t + c[k] * falling;
    }
    acc
}

/// Natural cubic spline through `(t_i, y_i)`, extended linearly outside the knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, SimError> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(SimError::Config("a spline needs at least two knots with one value each".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SimError::Config("spline knots must be strictly increasing".into()));
        }
        let mut moments = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut a = DMatrix::zeros(m, m);
            let mut b = DVector::zeros(m);
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                let r = i - 1;
                a[(r, r)] = 2.0 * (h0 + h1);
                if r > 0 {
                    a[(r, r - 1)] = h0;
                }
                if r + 1 < m {
                    a[(r, r + 1)] = h1;
                }
                b[r] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            let sol = a.lu().solve(&b).ok_or_else(|| SimError::Config("degenerate spline knots".into()))?;
            moments[1..n - 1].copy_from_slice(sol.as_slice());
        }
        Ok(CubicSpline { knots, values, moments })
    }

    pub fn eval(&self, t: f64, order: usize) -> f64 {
        let k = &self.knots;
        let n = k.len();
        if t < k[0] || t > k[n - 1] {
            let (i, edge) = if t < k[0] { (0, k[0]) } else { (n - 2, k[n - 1]) };
            let slope = self.piece(i, edge, 1);
            return match order {
                0 => self.piece(i, edge, 0) + slope * (t - edge),
                1 => slope,
                _ => 0.0,
            };
        }
        let i = match k.partition_point(|&x| x <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        self.piece(i, t, order)
    }

    fn piece(&self, i: usize, t: f64, order: usize) -> f64 {
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        let h = t1 - t0;
        let a = t1 - t;
        let b = t - t0;
        match order {
            0 => {
                m0 * a.powi(3) / (6.0 * h)
                    + m1 * b.powi(3) / (6.0 * h)
                    + (y0 / h - m0 * h / 6.0) * a
                    + (y1 / h - m1 * h / 6.0) * b
            }
            1 => -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0) + (y1 / h - m1 * h / 6.0),
            2 => m0 * a / h + m1 * b / h,
            3 => (m1 - m0) / h,
            _ => 0.0,
        }
    }
}

/// Desired outputs, one optional signal per stacked output channel; a
/// missing channel holds the output's initial value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub channels: Vec<Option<Signal>>,
}

impl Trajectory {
    pub fn new(channels: Vec<Option<Signal>>) -> Self {
        Trajectory { channels }
    }

    /// Replaces missing channels by constants taken from `y0`.
    pub fn resolved(&self, y0: &[f64]) -> Vec<Signal> {
        y0.iter()
            .enumerate()
            .map(|(j, &y)| match self.channels.get(j) {
                Some(Some(s)) => s.clone(),
                _ => Signal::Constant { value: y },
            })
            .collect()
    }
}
