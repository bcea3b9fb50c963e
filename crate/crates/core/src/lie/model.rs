use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::expr::{parse_expr, Assignment, Expr};
use crate::matrix::{numeric_rank, ExprMatrix};
use crate::symbols::{Category, Symbol, SymbolTable};

/// Which stacked output a computation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// Outputs regulated by the internal controller.
    Y1,
    /// Outputs added by the extension.
    Y2,
}

impl Block {
    pub fn index(self) -> u8 {
        match self {
            Block::Y1 => 1,
            Block::Y2 => 2,
        }
    }
}

/// Which input vector a decoupling matrix is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrt {
    U,
    W,
}

/// A control-affine system with two output blocks and optional feedthrough:
///
/// ```text
/// ẋ  = f(x) + G(x) u + H(x) w
/// y1 = h1(x) + Ā1(x) u + B̄1(x) w
/// y2 = h2(x) + Ā2(x) u + B̄2(x) w
/// ```
///
/// `state`, `inputs` and `extra` fix the coordinate order of `x`, `u` and `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub name: String,
    pub table: SymbolTable,
    pub state: Vec<Symbol>,
    pub inputs: Vec<Symbol>,
    pub extra: Vec<Symbol>,
    pub f: Vec<Expr>,
    pub g: ExprMatrix,
    pub h: ExprMatrix,
    pub h1: Vec<Expr>,
    pub h2: Vec<Expr>,
    pub abar1: ExprMatrix,
    pub abar2: ExprMatrix,
    pub bbar1: ExprMatrix,
    pub bbar2: ExprMatrix,
    /// Values of state and input symbols at the operating point; symbols not
    /// listed default to 0, or to 1 when declared nonzero.
    pub operating_point: BTreeMap<Symbol, f64>,
    /// Symbols whose vanishing makes the construction singular.
    pub nonzero: BTreeSet<Symbol>,
    /// Indices into the stacked output `(y1, y2)` that are angles.
    pub angular: BTreeSet<usize>,
}

impl SystemModel {
    pub fn n(&self) -> usize {
        self.state.len()
    }

    pub fn m1(&self) -> usize {
        self.inputs.len()
    }

    pub fn m2(&self) -> usize {
        self.extra.len()
    }

    /// Output rows of a block: `(η, Ā, B̄)`.
    pub fn block(&self, block: Block) -> (&[Expr], &ExprMatrix, &ExprMatrix) {
        match block {
            Block::Y1 => (&self.h1, &self.abar1, &self.bbar1),
            Block::Y2 => (&self.h2, &self.abar2, &self.bbar2),
        }
    }

    /// Field multiplying the given input vector.
    pub fn input_matrix(&self, wrt: Wrt) -> &ExprMatrix {
        match wrt {
            Wrt::U => &self.g,
            Wrt::W => &self.h,
        }
    }

    /// Full output vector `(y1, y2)` as expressions in states and inputs.
    pub fn outputs(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        for b in [Block::Y1, Block::Y2] {
            let (eta, abar, bbar) = self.block(b);
            for (i, e) in eta.iter().enumerate() {
                let mut terms = vec![e.clone()];
                for (j, u) in self.inputs.iter().enumerate() {
                    terms.push(abar.get(i, j).clone() * Expr::Sym(u.clone()));
                }
                for (j, w) in self.extra.iter().enumerate() {
                    terms.push(bbar.get(i, j).clone() * Expr::Sym(w.clone()));
                }
                out.push(crate::expr::simplify(&crate::expr::sum(terms)));
            }
        }
        out
    }

    /// `f + G u + H w` with input symbols left symbolic.
    pub fn closed_field(&self) -> Vec<Expr> {
        (0..self.n())
            .map(|i| {
                let mut terms = vec![self.f[i].clone()];
                for (j, u) in self.inputs.iter().enumerate() {
                    terms.push(self.g.get(i, j).clone() * Expr::Sym(u.clone()));
                }
                for (j, w) in self.extra.iter().enumerate() {
                    terms.push(self.h.get(i, j).clone() * Expr::Sym(w.clone()));
                }
                crate::expr::simplify(&crate::expr::sum(terms))
            })
            .collect()
    }

    /// Every state and input symbol at its operating-point value.
    pub fn operating_assignment(&self) -> Assignment {
        self.state
            .iter()
            .chain(&self.inputs)
            .chain(&self.extra)
            .map(|s| {
                let default = if self.nonzero.contains(s) { 1.0 } else { 0.0 };
                (s.clone(), self.operating_point.get(s).copied().unwrap_or(default))
            })
            .collect()
    }

    /// Symbols a sampled point must cover.
    pub fn sample_symbols(&self) -> Vec<Symbol> {
        self.table.iter().map(|(s, _)| s.clone()).collect()
    }

    /// Checks shapes and that every expression mentions only states; returns
    /// an error on the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (n, m1, m2) = (self.n(), self.m1(), self.m2());
        let dims = [
            ("f", self.f.len(), 1, n, 1),
            ("G", self.g.nrows(), self.g.ncols(), n, m1),
            ("H", self.h.nrows(), self.h.ncols(), n, m2),
            ("h1", self.h1.len(), 1, m1, 1),
            ("h2", self.h2.len(), 1, m2, 1),
            ("Abar1", self.abar1.nrows(), self.abar1.ncols(), m1, m1),
            ("Abar2", self.abar2.nrows(), self.abar2.ncols(), m2, m1),
            ("Bbar1", self.bbar1.nrows(), self.bbar1.ncols(), m1, m2),
            ("Bbar2", self.bbar2.nrows(), self.bbar2.ncols(), m2, m2),
        ];
        for (name, r, c, er, ec) in dims {
            if (r, c) != (er, ec) {
                return Err(ModelError::Dimension(format!("{name} is {r}x{c}, expected {er}x{ec}")));
            }
        }
        for s in self.state.iter().chain(&self.inputs).chain(&self.extra) {
            if !self.table.contains(s.as_str()) {
                return Err(ModelError::UndeclaredSymbol(s.to_string()));
            }
        }
        let states: BTreeSet<&Symbol> = self.state.iter().collect();
        let all = self
            .f
            .iter()
            .chain(self.g.entries())
            .chain(self.h.entries())
            .chain(&self.h1)
            .chain(&self.h2)
            .chain(self.abar1.entries())
            .chain(self.abar2.entries())
            .chain(self.bbar1.entries())
            .chain(self.bbar2.entries());
        for e in all {
            for s in e.symbols() {
                if !states.contains(&s) {
                    return Err(ModelError::UndeclaredSymbol(format!(
                        "{s} (model expressions may only mention states)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Non-fatal structural notes: the underactuation bound `m2 <= n - m1`
    /// and full column rank of `G` at the operating point.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if self.m2() + self.m1() > self.n() {
            notes.push(format!(
                "m2 = {} exceeds n - m1 = {}; outputs with feedthrough carry the extra inputs",
                self.m2(),
                self.n() as i64 - self.m1() as i64
            ));
        }
        match self.g.eval(&self.operating_assignment()) {
            Ok(g) => {
                let rank = numeric_rank(&g, 1e-9);
                if rank < self.m1() {
                    notes.push(format!("rank G(x°) = {rank} < m1 = {}", self.m1()));
                }
            }
            Err(e) => notes.push(format!("G cannot be evaluated at the operating point: {e}")),
        }
        notes
    }

    /// Serializable form with every expression printed.
    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            name: self.name.clone(),
            symbols: self
                .table
                .iter()
                .map(|(s, c)| SymbolDoc { name: s.to_string(), category: *c })
                .collect(),
            state: names(&self.state),
            inputs: names(&self.inputs),
            extra: names(&self.extra),
            f: self.f.iter().map(|e| e.to_string()).collect(),
            g: self.g.to_strings(),
            h: self.h.to_strings(),
            h1: self.h1.iter().map(|e| e.to_string()).collect(),
            h2: self.h2.iter().map(|e| e.to_string()).collect(),
            abar1: self.abar1.to_strings(),
            abar2: self.abar2.to_strings(),
            bbar1: self.bbar1.to_strings(),
            bbar2: self.bbar2.to_strings(),
            operating_point: self.operating_point.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            nonzero: self.nonzero.iter().map(|s| s.to_string()).collect(),
            angular: self.angular.iter().copied().collect(),
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self, ModelError> {
        let mut table = SymbolTable::new();
        for s in &doc.symbols {
            table.declare(&s.name, s.category)?;
        }
        let sym = |n: &String| -> Result<Symbol, ModelError> {
            table
                .lookup(n)
                .map(|(s, _)| s)
                .ok_or_else(|| ModelError::UndeclaredSymbol(n.clone()))
        };
        let syms = |v: &[String]| v.iter().map(sym).collect::<Result<Vec<_>, _>>();
        let vec = |v: &[String]| {
            v.iter().map(|s| parse_expr(s, &table)).collect::<Result<Vec<_>, _>>()
        };
        let state = syms(&doc.state)?;
        let inputs = syms(&doc.inputs)?;
        let extra = syms(&doc.extra)?;
        let (m1, m2) = (inputs.len(), extra.len());
        let model = SystemModel {
            name: doc.name.clone(),
            f: vec(&doc.f)?,
            g: ExprMatrix::from_strings(&doc.g, m1, &table)?,
            h: ExprMatrix::from_strings(&doc.h, m2, &table)?,
            h1: vec(&doc.h1)?,
            h2: vec(&doc.h2)?,
            abar1: ExprMatrix::from_strings(&doc.abar1, m1, &table)?,
            abar2: ExprMatrix::from_strings(&doc.abar2, m1, &table)?,
            bbar1: ExprMatrix::from_strings(&doc.bbar1, m2, &table)?,
            bbar2: ExprMatrix::from_strings(&doc.bbar2, m2, &table)?,
            operating_point: doc
                .operating_point
                .iter()
                .map(|(k, v)| Ok((sym(k)?, *v)))
                .collect::<Result<_, ModelError>>()?,
            nonzero: doc.nonzero.iter().map(sym).collect::<Result<_, _>>()?,
            angular: doc.angular.iter().copied().collect(),
            state,
            inputs,
            extra,
            table: table.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

fn names(v: &[Symbol]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolDoc {
    pub name: String,
    pub category: Category,
}

/// JSON shape of a [`SystemModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub name: String,
    pub symbols: Vec<SymbolDoc>,
    pub state: Vec<String>,
    pub inputs: Vec<String>,
    pub extra: Vec<String>,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
    pub h: Vec<Vec<String>>,
    pub h1: Vec<String>,
    pub h2: Vec<String>,
    pub abar1: Vec<Vec<String>>,
    pub abar2: Vec<Vec<String>>,
    pub bbar1: Vec<Vec<String>>,
    pub bbar2: Vec<Vec<String>>,
    pub operating_point: BTreeMap<String, f64>,
    pub nonzero: Vec<String>,
    pub angular: Vec<usize>,
}

/// Assembles a model from expression strings; the usual way to write one
/// down in code.
#[derive(Clone, Debug, Default)]
pub struct ModelSpec<'a> {
    pub name: &'a str,
    pub states: &'a [&'a str],
    pub inputs: &'a [&'a str],
    pub extra: &'a [&'a str],
    pub f: &'a [&'a str],
    /// Rows of `G`; empty means zero.
    pub g: &'a [&'a [&'a str]],
    pub h: &'a [&'a [&'a str]],
    pub h1: &'a [&'a str],
    pub h2: &'a [&'a str],
    pub abar1: &'a [&'a [&'a str]],
    pub abar2: &'a [&'a [&'a str]],
    pub bbar1: &'a [&'a [&'a str]],
    pub bbar2: &'a [&'a [&'a str]],
    pub operating_point: &'a [(&'a str, f64)],
    pub nonzero: &'a [&'a str],
    pub angular: &'a [usize],
}

impl ModelSpec<'_> {
    pub fn build(&self) -> Result<SystemModel, ModelError> {
        let table = SymbolTable::with_groups(self.states, self.inputs, self.extra)?;
        let sym = |n: &str| -> Result<Symbol, ModelError> {
            table
                .lookup(n)
                .map(|(s, _)| s)
                .ok_or_else(|| ModelError::UndeclaredSymbol(n.to_string()))
        };
        let vec = |v: &[&str]| v.iter().map(|s| parse_expr(s, &table)).collect::<Result<Vec<_>, _>>();
        let mat = |rows: &[&[&str]], r: usize, c: usize| -> Result<ExprMatrix, ModelError> {
            if rows.is_empty() {
                return Ok(ExprMatrix::zeros(r, c));
            }
            let parsed = rows
                .iter()
                .map(|row| vec(row))
                .collect::<Result<Vec<_>, _>>()?;
            ExprMatrix::from_rows(parsed, c)
        };
        let (n, m1, m2) = (self.states.len(), self.inputs.len(), self.extra.len());
        let zero_vec = |v: &[&str], len: usize| -> Result<Vec<Expr>, ModelError> {
            if v.is_empty() {
                Ok(vec![Expr::zero(); len])
            } else {
                Ok(vec(v)?)
            }
        };
        let model = SystemModel {
            name: self.name.to_string(),
            state: self.states.iter().map(|s| sym(s)).collect::<Result<_, _>>()?,
            inputs: self.inputs.iter().map(|s| sym(s)).collect::<Result<_, _>>()?,
            extra: self.extra.iter().map(|s| sym(s)).collect::<Result<_, _>>()?,
            f: zero_vec(self.f, n)?,
            g: mat(self.g, n, m1)?,
            h: mat(self.h, n, m2)?,
            h1: zero_vec(self.h1, m1)?,
            h2: zero_vec(self.h2, m2)?,
            abar1: mat(self.abar1, m1, m1)?,
            abar2: mat(self.abar2, m2, m1)?,
            bbar1: mat(self.bbar1, m1, m2)?,
            bbar2: mat(self.bbar2, m2, m2)?,
            operating_point: self
                .operating_point
                .iter()
                .map(|(k, v)| Ok((sym(k)?, *v)))
                .collect::<Result<_, ModelError>>()?,
            nonzero: self.nonzero.iter().map(|s| sym(s)).collect::<Result<_, _>>()?,
            angular: self.angular.iter().copied().collect(),
            table,
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator() -> SystemModel {
        ModelSpec {
            name: "double_integrator",
            states: &["x1", "x2"],
            inputs: &["u"],
            f: &["x2", "0"],
            g: &[&["0"], &["1"]],
            h1: &["x1"],
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn doc_round_trip() {
        let m = double_integrator();
        let back = SystemModel::from_doc(&m.to_doc()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn outputs_include_feedthrough() {
        let m = ModelSpec {
            name: "ft",
            states: &["x"],
            inputs: &["u"],
            f: &["-x"],
            g: &[&["1"]],
            h1: &["x"],
            abar1: &[&["2"]],
            ..Default::default()
        }
        .build()
        .unwrap();
        assert_eq!(m.outputs()[0].to_string(), "2*u + x");
    }

    #[test]
    fn rejects_input_in_drift() {
        let r = ModelSpec {
            name: "bad",
            states: &["x"],
            inputs: &["u"],
            f: &["u"],
            h1: &["x"],
            ..Default::default()
        }
        .build();
        assert!(matches!(r, Err(ModelError::UndeclaredSymbol(_))));
    }
}
