//! Fixed-step explicit integration.

use crate::error::SimError;

/// One classical Runge–Kutta step of `ẋ = field(t, x)`.
///
/// `field` writes the derivative into its output slice and may fail; the
/// step fails with [`SimError::Divergence`] if the new state is not finite.
pub fn rk4_step<F>(mut field: F, t: f64, x: &[f64], dt: f64, step: usize) -> Result<Vec<f64>, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SimError>,
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    field(t, x, &mut k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    field(t + 0.5 * dt, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    field(t + 0.5 * dt, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    field(t + dt, &tmp, &mut k4)?;

    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(SimError::Divergence { step })
    }
}

/// Central difference of order `order` with stencil points spaced `2*s`
/// apart: `samples[k]` must hold the value at `t_c + (order - 2k) * s`.
pub fn central_difference(samples: &[f64], order: usize, s: f64) -> f64 {
    assert_eq!(samples.len(), order + 1, "stencil needs order + 1 samples");
    let mut acc = 0.0;
    let mut binom = 1.0;
    for (k, v) in samples.iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * v;
        binom = binom * (order - k) as f64 / (k + 1) as f64;
    }
    acc / (2.0 * s).powi(order as i32)
}
