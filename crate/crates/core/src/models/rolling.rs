use crate::error::ModelError;
use crate::expr::{parse_expr, Expr};
use crate::simulate::SimulationTrace;
use crate::symbols::{Symbol, SymbolTable};

/// `h(θ)ᵀ (v_x, v_y, θ̇)` at every sample of a unicycle trace, with the
/// velocities read from the recorded outputs and `θ̇ = u2 + h3(θ) w`.
/// The value is the lateral velocity, so it vanishes when `w ≡ 0` and
/// `h` is orthogonal to the heading.
pub fn rolling_constraint_residual(trace: &SimulationTrace, h: [&str; 3]) -> Result<Vec<f64>, ModelError> {
    let table = SymbolTable::with_groups(&["x"], &[], &[])?;
    let h: Vec<Expr> = h.iter().map(|s| parse_expr(s, &table)).collect::<Result<_, _>>()?;
    let col = |name: &str| {
        trace.column(name).ok_or_else(|| ModelError::UndeclaredSymbol(format!("trace column `{name}`")))
    };
    let theta = col("x")?;
    let u2 = col("u2")?;
    let w = col("w")?;
    let vx = col("y1")?;
    let vy = col("y2")?;
    let x = Symbol::new("x");
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let at = [(x.clone(), theta[k])].into_iter().collect();
        let hv: Vec<f64> = h.iter().map(|e| e.eval(&at).unwrap_or(f64::NAN)).collect();
        let theta_dot = u2[k] + hv[2] * w[k];
        out.push(hv[0] * vx[k] + hv[1] * vy[k] + hv[2] * theta_dot);
    }
    Ok(out)
}
