use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SynthesisError};
use crate::expr::{parse_expr, Expr};
use crate::lie::{ModelDoc, SystemModel};
use crate::matrix::ExprMatrix;
use crate::symbols::{Category, Symbol};

use super::{gains_to_rows, Case, ConditionVariant, ControllerKind, FeasibilityCertificate, InternalController, SynthesisResult};

pub const SYNTHESIS_SCHEMA: &str = "ioext-synthesis/v1";

/// Self-contained JSON form of a [`SynthesisResult`]. Reloading it gives a
/// result that simulates identically to the one it was written from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDoc {
    pub schema: String,
    pub case: Case,
    pub plant: ModelDoc,
    pub references: Vec<String>,
    pub controller: ControllerDoc,
    pub gamma: Vec<Vec<String>>,
    pub phi: Vec<String>,
    pub extended_state_layout: Vec<String>,
    pub reference_layout: Vec<String>,
    pub u_ext_layout: Vec<String>,
    pub orders: Vec<usize>,
    pub output_derivatives: Vec<Vec<String>>,
    pub feasibility: FeasibilityDoc,
    /// Case 2 only; informational, not read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<ExtensionDoc>,
}

/// Blocks of the dynamically extended `y1` derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionDoc {
    pub permutation: Vec<usize>,
    pub n1: Vec<Vec<String>>,
    pub n2: Vec<Vec<String>>,
    pub b1: Vec<Vec<String>>,
    pub abar2: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerDoc {
    pub kind: ControllerKind,
    pub k1: usize,
    pub gains: Vec<Vec<Vec<f64>>>,
    pub inputs: Vec<String>,
    pub delayed: Vec<String>,
    pub u_expr: Vec<String>,
    pub xi_dynamics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityDoc {
    pub condition: String,
    pub value_at_x0: Option<f64>,
    pub feasible: bool,
    pub constant_rank: bool,
    pub identically_zero: bool,
    pub gamma_invertible_at_x0: bool,
    pub singular_set_note: String,
    pub printed_variant: Option<VariantDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantDoc {
    pub condition: String,
    pub agrees: bool,
}

fn strings(v: &[Expr]) -> Vec<String> {
    v.iter().map(|e| e.to_string()).collect()
}

fn names(v: &[Symbol]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl SynthesisDoc {
    pub fn from_result(s: &SynthesisResult) -> Self {
        let f = &s.feasibility;
        SynthesisDoc {
            schema: SYNTHESIS_SCHEMA.to_string(),
            case: s.case,
            plant: s.plant.to_doc(),
            references: s.table.of(Category::Reference).iter().map(|r| r.to_string()).collect(),
            controller: ControllerDoc {
                kind: s.controller.kind,
                k1: s.controller.k1,
                gains: gains_to_rows(&s.controller.gains),
                inputs: names(&s.controller.inputs),
                delayed: names(&s.controller.delayed),
                u_expr: strings(&s.controller.u_expr),
                xi_dynamics: strings(&s.controller.xi_dynamics),
            },
            gamma: s.gamma.to_strings(),
            phi: strings(&s.phi),
            extended_state_layout: names(&s.extended_state_layout),
            reference_layout: names(&s.reference_layout),
            u_ext_layout: names(&s.u_ext_layout),
            orders: s.orders.clone(),
            output_derivatives: s.output_derivatives.iter().map(|d| strings(d)).collect(),
            feasibility: FeasibilityDoc {
                condition: f.condition.to_string(),
                value_at_x0: f.value_at_x0.is_finite().then_some(f.value_at_x0),
                feasible: f.feasible,
                constant_rank: f.constant_rank,
                identically_zero: f.identically_zero,
                gamma_invertible_at_x0: f.gamma_invertible_at_x0,
                singular_set_note: f.singular_set_note.clone(),
                printed_variant: f
                    .printed_variant
                    .as_ref()
                    .map(|v| VariantDoc { condition: v.condition.to_string(), agrees: v.agrees }),
            },
            extension: s.details.as_ref().map(|d| ExtensionDoc {
                permutation: d.transformation.permutation.clone(),
                n1: d.n1.to_strings(),
                n2: d.n2.to_strings(),
                b1: d.b1.to_strings(),
                abar2: d.abar2.to_strings(),
            }),
        }
    }

    pub fn to_result(&self) -> Result<SynthesisResult, SynthesisError> {
        if self.schema != SYNTHESIS_SCHEMA {
            return Err(SynthesisError::Unsupported(format!("unknown schema `{}`", self.schema)));
        }
        let plant = SystemModel::from_doc(&self.plant)?;
        let mut table = plant.table.clone();
        for r in &self.references {
            table.declare(r, Category::Reference)?;
        }
        let t = &table;
        let sym = |n: &String| t.lookup(n).map(|(s, _)| s).ok_or_else(|| ModelError::UndeclaredSymbol(n.clone()));
        let syms = |v: &[String]| v.iter().map(sym).collect::<Result<Vec<_>, _>>();
        let exprs = |v: &[String]| v.iter().map(|s| parse_expr(s, t)).collect::<Result<Vec<_>, _>>();
        let m = self.u_ext_layout.len();
        let gains = self
            .controller
            .gains
            .iter()
            .map(|rows| {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(ModelError::Dimension("gain matrices must be square".into()));
                }
                Ok(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let f = &self.feasibility;
        let feasibility = FeasibilityCertificate {
            condition: parse_expr(&f.condition, t).map_err(ModelError::from)?,
            value_at_x0: f.value_at_x0.unwrap_or(f64::NAN),
            feasible: f.feasible,
            constant_rank: f.constant_rank,
            identically_zero: f.identically_zero,
            gamma_invertible_at_x0: f.gamma_invertible_at_x0,
            singular_set_note: f.singular_set_note.clone(),
            printed_variant: match &f.printed_variant {
                Some(v) => Some(ConditionVariant {
                    condition: parse_expr(&v.condition, t).map_err(ModelError::from)?,
                    agrees: v.agrees,
                }),
                None => None,
            },
        };
        Ok(SynthesisResult {
            case: self.case,
            controller: InternalController {
                kind: self.controller.kind,
                k1: self.controller.k1,
                gains,
                inputs: syms(&self.controller.inputs)?,
                delayed: syms(&self.controller.delayed)?,
                u_expr: exprs(&self.controller.u_expr).map_err(ModelError::from)?,
                xi_dynamics: exprs(&self.controller.xi_dynamics).map_err(ModelError::from)?,
            },
            gamma: ExprMatrix::from_strings(&self.gamma, m, t)?,
            phi: exprs(&self.phi).map_err(ModelError::from)?,
            extended_state_layout: syms(&self.extended_state_layout)?,
            reference_layout: syms(&self.reference_layout)?,
            u_ext_layout: syms(&self.u_ext_layout)?,
            orders: self.orders.clone(),
            output_derivatives: self
                .output_derivatives
                .iter()
                .map(|d| exprs(d))
                .collect::<Result<Vec<_>, _>>()
                .map_err(ModelError::from)?,
            feasibility,
            details: None,
            plant,
            table,
        })
    }
}

impl SynthesisResult {
    pub fn to_doc(&self) -> SynthesisDoc {
        SynthesisDoc::from_result(self)
    }
}
