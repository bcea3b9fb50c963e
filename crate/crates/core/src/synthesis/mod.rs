//! Internal-controller reconstruction and composite decoupling for the
//! regular (case 1) and singular (case 2) relative-degree cases, with the
//! feasibility conditions on the extra-input directions.

mod case1;
mod case2;
mod doc;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::SynthesisError;
use crate::expr::{simplify, sum, Assignment, Expr};
use crate::lie::{ser_matrix, ser_vec, SystemModel, DET_TOL};
use crate::matrix::{is_spd, relative_det, ExprMatrix};
use crate::sampling::{identically_zero, perturbed_points, PointSampler};
use crate::symbols::{Category, Symbol, SymbolTable};

pub use case1::{feasibility_case1, synth_case1};
pub use case2::{
    dynamic_extension, feasibility_case2, input_transformation, integrate_extra, synth_case2,
    Case2Details, InputTransformation,
};
pub use doc::{ExtensionDoc, SynthesisDoc, SYNTHESIS_SCHEMA};

/// Default scalar gain when none is given.
pub const DEFAULT_GAIN: f64 = 5.0;
/// Eigenvalue floor for positive definiteness of gains.
pub const GAIN_EIG_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Case {
    /// `A1` nonsingular; static internal controller.
    #[serde(rename = "1")]
    Regular,
    /// `A1` singular; dynamic extension by integrators.
    #[serde(rename = "2")]
    Singular,
}

impl Case {
    pub fn number(self) -> u8 {
        match self {
            Case::Regular => 1,
            Case::Singular => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Static,
    Dynamic,
}

/// The platform's own controller, reconstructed symbolically.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InternalController {
    pub kind: ControllerKind,
    /// Number of integrator states.
    pub k1: usize,
    #[serde(serialize_with = "ser_gains")]
    pub gains: Vec<DMatrix<f64>>,
    /// Names of the plant inputs the controller drives, in order.
    pub inputs: Vec<Symbol>,
    /// Integrator states (the delayed original inputs).
    pub delayed: Vec<Symbol>,
    /// Control law over plant states and references.
    #[serde(serialize_with = "ser_vec")]
    pub u_expr: Vec<Expr>,
    /// Right-hand side of each integrator state.
    #[serde(serialize_with = "ser_vec")]
    pub xi_dynamics: Vec<Expr>,
}

fn ser_gains<S: serde::Serializer>(g: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
    gains_to_rows(g).serialize(s)
}

pub(crate) fn gains_to_rows(g: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    g.iter()
        .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
        .collect()
}

/// Evidence that the composite decoupling matrix is invertible near `x°`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityCertificate {
    /// Determinant whose nonvanishing is required.
    #[serde(serialize_with = "ser_expr")]
    pub condition: Expr,
    pub value_at_x0: f64,
    pub feasible: bool,
    /// The condition is nonzero at every perturbation of `x°`.
    pub constant_rank: bool,
    pub identically_zero: bool,
    /// Independent numeric check: `|det Γ(x°)| / prod(row norms)` above threshold.
    pub gamma_invertible_at_x0: bool,
    pub singular_set_note: String,
    /// Case 2 only: the same determinant with the pre-extension `A2`.
    pub printed_variant: Option<ConditionVariant>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionVariant {
    #[serde(serialize_with = "ser_expr")]
    pub condition: Expr,
    /// Numerically equal to the main condition at the sampled points.
    pub agrees: bool,
}

pub(crate) fn ser_expr<S: serde::Serializer>(e: &Expr, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&e.to_string())
}

/// A synthesized two-layer structure:
/// `y^(ρ) = φ(x_ext, r, …) + Γ(x_ext) u_ext`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthesisResult {
    pub case: Case,
    /// The system the simulator integrates: the original model in case 1,
    /// the dynamically extended model with integrated extra inputs in case 2.
    #[serde(skip)]
    pub plant: SystemModel,
    /// Plant symbols plus reference symbols.
    #[serde(skip)]
    pub table: SymbolTable,
    pub controller: InternalController,
    #[serde(serialize_with = "ser_matrix")]
    pub gamma: ExprMatrix,
    #[serde(serialize_with = "ser_vec")]
    pub phi: Vec<Expr>,
    pub extended_state_layout: Vec<Symbol>,
    /// Reference-chain states `r^(i)` below the top order, order-major.
    pub reference_layout: Vec<Symbol>,
    /// Top-order references followed by the extra-input channel.
    pub u_ext_layout: Vec<Symbol>,
    /// Differentiation order of each output channel (`y1` rows, then `y2`).
    pub orders: Vec<usize>,
    /// Per channel, the output and its derivatives below `orders[j]`, over
    /// plant states only.
    #[serde(skip)]
    pub output_derivatives: Vec<Vec<Expr>>,
    pub feasibility: FeasibilityCertificate,
    #[serde(skip)]
    pub details: Option<Case2Details>,
}

impl SynthesisResult {
    pub fn m1(&self) -> usize {
        self.plant.m1()
    }

    pub fn m2(&self) -> usize {
        self.plant.m2()
    }

    /// Number of reference channels (the `y1` rows).
    pub fn reference_channels(&self) -> usize {
        self.plant.m1()
    }

    /// Order of the reference fed through `u_ext`.
    pub fn top_reference_order(&self) -> usize {
        self.reference_layout.len() / self.reference_channels().max(1)
    }
}

/// Synthesis options shared by both cases.
#[derive(Clone, Debug, Default)]
pub struct SynthesisOptions {
    /// Gain matrices `K_0, K_1, …`; defaults to `DEFAULT_GAIN * I`.
    pub gains: Option<Vec<DMatrix<f64>>>,
    /// Forces a case instead of deciding from the regularity of `A1`.
    pub case: Option<Case>,
    pub max_order: Option<usize>,
}

/// Picks the case from the regularity of `A1` and synthesizes.
pub fn synthesize(system: &SystemModel, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthesisError> {
    let case = match opts.case {
        Some(c) => c,
        None => recommend_case(system, opts.max_order)?,
    };
    match case {
        Case::Regular => synth_case1(system, opts),
        Case::Singular => synth_case2(system, opts),
    }
}

/// Case 1 when `A1` is regular near `x°`, case 2 otherwise.
pub fn recommend_case(system: &SystemModel, max_order: Option<usize>) -> Result<Case, SynthesisError> {
    let max = max_order.unwrap_or_else(|| crate::lie::default_max_order(system));
    let rep = crate::lie::vector_relative_degree(system, crate::lie::Block::Y1, crate::lie::Wrt::U, max)?;
    Ok(if rep.regular { Case::Regular } else { Case::Singular })
}

/// Gains to use: the given ones validated, or `DEFAULT_GAIN * I`.
pub(crate) fn resolve_gains(
    given: Option<&Vec<DMatrix<f64>>>,
    count: usize,
    size: usize,
) -> Result<Vec<DMatrix<f64>>, SynthesisError> {
    let gains = match given {
        None => vec![DMatrix::identity(size, size) * DEFAULT_GAIN; count],
        Some(g) if g.len() == 1 && count > 1 => vec![g[0].clone(); count],
        Some(g) => g.clone(),
    };
    if gains.len() != count || gains.iter().any(|k| k.nrows() != size || k.ncols() != size) {
        return Err(SynthesisError::GainShape { expected: count, size, got: gains.len() });
    }
    for (i, k) in gains.iter().enumerate() {
        if !is_spd(k, GAIN_EIG_TOL) {
            return Err(SynthesisError::GainNotPd { index: i });
        }
    }
    Ok(gains)
}

/// Reference symbol for channel `j` (0-based) and derivative order `i`.
pub fn reference_name(j: usize, i: usize) -> String {
    if i == 0 {
        format!("r{}", j + 1)
    } else {
        format!("r{}_d{}", j + 1, i)
    }
}

/// Declares `r^(0..=top)` for `channels` channels; returns `refs[i][j]`.
pub(crate) fn declare_references(
    table: &mut SymbolTable,
    channels: usize,
    top: usize,
) -> Result<Vec<Vec<Symbol>>, SynthesisError> {
    let mut refs = Vec::with_capacity(top + 1);
    for i in 0..=top {
        let mut row = Vec::with_capacity(channels);
        for j in 0..channels {
            let name = table.fresh_name(&reference_name(j, i));
            row.push(table.declare(&name, Category::Reference)?);
        }
        refs.push(row);
    }
    Ok(refs)
}

/// `Σ_i K_i (r^(i) − y^(i))` for `i` in `0..derivs.len()`.
pub(crate) fn gain_sum(gains: &[DMatrix<f64>], refs: &[Vec<Symbol>], derivs: &[Vec<Expr>]) -> Vec<Expr> {
    let m = refs.first().map_or(0, Vec::len);
    (0..m)
        .map(|a| {
            let mut terms = Vec::new();
            for (i, k) in gains.iter().enumerate() {
                for b in 0..m {
                    let kab = k[(a, b)];
                    if kab != 0.0 {
                        let err = Expr::Sym(refs[i][b].clone()) - derivs[i][b].clone();
                        terms.push(Expr::Const(kab) * err);
                    }
                }
            }
            simplify(&sum(terms))
        })
        .collect()
}

pub(crate) fn vec_add(a: &[Expr], b: &[Expr]) -> Vec<Expr> {
    a.iter().zip(b).map(|(x, y)| simplify(&(x.clone() + y.clone()))).collect()
}

pub(crate) fn vec_sub(a: &[Expr], b: &[Expr]) -> Vec<Expr> {
    a.iter().zip(b).map(|(x, y)| simplify(&(x.clone() - y.clone()))).collect()
}

pub(crate) fn syms_to_exprs(s: &[Symbol]) -> Vec<Expr> {
    s.iter().map(|s| Expr::Sym(s.clone())).collect()
}

/// Certificate for `condition`, evaluated at the plant operating point and
/// its perturbations; `gamma` gives the independent invertibility check.
pub(crate) fn certify(
    condition: Expr,
    gamma: &ExprMatrix,
    plant: &SystemModel,
    printed_variant: Option<ConditionVariant>,
) -> FeasibilityCertificate {
    let op = plant.operating_assignment();
    let value_at_x0 = condition.eval(&op).unwrap_or(f64::NAN);
    let mut sampler = PointSampler::new(plant.sample_symbols(), &plant.nonzero);
    let ident_zero = identically_zero(std::slice::from_ref(&condition), &mut sampler);
    let constant_rank = perturbed_points(&op).iter().all(|p| {
        condition.eval(p).map(|v| v.is_finite() && v.abs() > DET_TOL).unwrap_or(false)
    });
    let gamma_invertible_at_x0 = gamma
        .eval(&op)
        .map(|g| g.iter().all(|v| v.is_finite()) && relative_det(&g) > DET_TOL)
        .unwrap_or(false);
    let feasible = !ident_zero && value_at_x0.is_finite() && value_at_x0.abs() > DET_TOL && constant_rank;
    FeasibilityCertificate {
        singular_set_note: singular_note(&condition, &plant.nonzero, ident_zero),
        condition,
        value_at_x0,
        feasible,
        constant_rank,
        identically_zero: ident_zero,
        gamma_invertible_at_x0,
        printed_variant,
    }
}

fn singular_note(condition: &Expr, nonzero: &BTreeSet<Symbol>, ident_zero: bool) -> String {
    if ident_zero {
        return "condition vanishes identically; no point is feasible".to_string();
    }
    let syms = condition.symbols();
    let hits: Vec<String> = nonzero.iter().filter(|s| syms.contains(s)).map(|s| format!("{s} != 0")).collect();
    if hits.is_empty() {
        "feasible wherever the condition is nonzero".to_string()
    } else {
        format!("requires {} and a nonzero condition", hits.join(", "))
    }
}

/// Compares two expressions at the given points.
pub(crate) fn agree_numerically(a: &Expr, b: &Expr, points: &[Assignment]) -> bool {
    points.iter().all(|p| match (a.eval(p), b.eval(p)) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        (Err(_), Err(_)) => true,
        _ => false,
    })
}

/// Channel-to-output influence pattern read off `Γ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoleSwapReport {
    pub channels: Vec<ChannelInfluence>,
    /// Every extra-input column of `Γ` is confined to the `y1` rows.
    pub extra_inputs_confined_to_y1: bool,
    /// Some virtual-input column reaches the `y2` rows.
    pub virtual_inputs_reach_y2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelInfluence {
    pub channel: String,
    pub y1_rows: Vec<usize>,
    pub y2_rows: Vec<usize>,
}

/// Which `u_ext` channels drive which output blocks (case 2 only).
pub fn role_swap_report(synth: &SynthesisResult) -> Result<RoleSwapReport, SynthesisError> {
    if synth.case != Case::Singular {
        return Err(SynthesisError::CaseMismatch("role swap applies to case 2 only".into()));
    }
    let m1 = synth.m1();
    let mut sampler = PointSampler::new(synth.table.iter().map(|(s, _)| s.clone()), &synth.plant.nonzero);
    let mut channels = Vec::new();
    for (j, name) in synth.u_ext_layout.iter().enumerate() {
        let mut y1_rows = Vec::new();
        let mut y2_rows = Vec::new();
        for i in 0..synth.gamma.nrows() {
            let e = synth.gamma.get(i, j);
            if !identically_zero(std::slice::from_ref(e), &mut sampler) {
                if i < m1 {
                    y1_rows.push(i);
                } else {
                    y2_rows.push(i - m1);
                }
            }
        }
        channels.push(ChannelInfluence { channel: name.to_string(), y1_rows, y2_rows });
    }
    let extra_inputs_confined_to_y1 = channels[m1..].iter().all(|c| c.y2_rows.is_empty());
    let virtual_inputs_reach_y2 = channels[..m1].iter().any(|c| !c.y2_rows.is_empty());
    Ok(RoleSwapReport { channels, extra_inputs_confined_to_y1, virtual_inputs_reach_y2 })
}
