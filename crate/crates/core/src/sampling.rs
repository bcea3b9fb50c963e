//! Seeded random assignments used by the numeric identity and rank checks.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::expr::{simplify, Assignment, Expr};
use crate::symbols::Symbol;

/// Number of random points behind an "identically zero" verdict.
pub const ZERO_SAMPLES: usize = 50;
/// Absolute threshold below which a sampled value counts as zero.
pub const ZERO_TOL: f64 = 1e-10;
/// Number of Gaussian perturbations of the operating point in rank checks.
pub const PERTURBATIONS: usize = 20;
/// Standard deviation of those perturbations.
pub const PERTURBATION_SIGMA: f64 = 0.1;

const SEED: u64 = 0x1e_5eed;

/// Draws points uniformly from `[-2, 2]` per symbol; symbols in `nonzero`
/// get a random sign and magnitude in `[0.1, 2]`.
pub struct PointSampler {
    symbols: Vec<Symbol>,
    nonzero: BTreeSet<Symbol>,
    rng: ChaCha8Rng,
}

impl PointSampler {
    pub fn new(symbols: impl IntoIterator<Item = Symbol>, nonzero: &BTreeSet<Symbol>) -> Self {
        Self::with_seed(symbols, nonzero, SEED)
    }

    pub fn with_seed(symbols: impl IntoIterator<Item = Symbol>, nonzero: &BTreeSet<Symbol>, seed: u64) -> Self {
        PointSampler {
            symbols: symbols.into_iter().collect(),
            nonzero: nonzero.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> Assignment {
        let mut out = BTreeMap::new();
        for s in &self.symbols {
            let v = if self.nonzero.contains(s) {
                let mag: f64 = self.rng.random_range(0.1..=2.0);
                if self.rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                self.rng.random_range(-2.0..=2.0)
            };
            out.insert(s.clone(), v);
        }
        out
    }
}

/// The operating point followed by [`PERTURBATIONS`] Gaussian perturbations
/// of it.
pub fn perturbed_points(op: &Assignment) -> Vec<Assignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xabcd);
    let normal = Normal::new(0.0, PERTURBATION_SIGMA).expect("valid sigma");
    let mut out = vec![op.clone()];
    for _ in 0..PERTURBATIONS {
        out.push(op.iter().map(|(k, v)| (k.clone(), v + normal.sample(&mut rng))).collect());
    }
    out
}

/// True when every entry simplifies to zero, or evaluates below
/// [`ZERO_TOL`] at [`ZERO_SAMPLES`] random points. Points where some entry is
/// undefined are redrawn.
pub fn identically_zero(entries: &[Expr], sampler: &mut PointSampler) -> bool {
    let simplified: Vec<Expr> = entries.iter().map(simplify).collect();
    if simplified.iter().all(Expr::is_zero) {
        return true;
    }
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < ZERO_SAMPLES && attempts < 20 * ZERO_SAMPLES {
        attempts += 1;
        let p = sampler.sample();
        let vals: Result<Vec<f64>, _> = simplified.iter().map(|e| e.eval(&p)).collect();
        let Ok(vals) = vals else { continue };
        if vals.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if vals.iter().any(|v| v.abs() >= ZERO_TOL) {
            return false;
        }
        accepted += 1;
    }
    accepted == ZERO_SAMPLES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::symbols::SymbolTable;

    #[test]
    fn nonzero_symbols_avoid_the_origin() {
        let u1 = Symbol::new("u1");
        let mut s = PointSampler::new([u1.clone()], &BTreeSet::from([u1.clone()]));
        for _ in 0..200 {
            let v = s.sample()[&u1];
            assert!((0.1..=2.0).contains(&v.abs()));
        }
    }

    #[test]
    fn zero_by_sampling_when_simplifier_misses() {
        let t = SymbolTable::with_groups(&["x"], &[], &[]).unwrap();
        // sin(2x) - 2 sin(x) cos(x) is outside the rewrite rules.
        let e = parse_expr("sin(2*x) - 2*sin(x)*cos(x)", &t).unwrap();
        let mut s = PointSampler::new([Symbol::new("x")], &BTreeSet::new());
        assert!(identically_zero(&[e], &mut s));
        let nz = parse_expr("sin(x)", &t).unwrap();
        assert!(!identically_zero(&[nz], &mut s));
    }
}
