//! Sectioned plain-text system definitions.
//!
//! ```text
//! [symbols]
//! states = x
//! inputs = u1, u2
//! extra = w
//! nonzero = u1
//!
//! [operating_point]
//! u1 = 1
//!
//! [dynamics]
//! G = [0, 1]
//! H = [0]
//!
//! [outputs]
//! Abar1 = [cos(x), 0; sin(x), 0]
//! Bbar1 = [-sin(x); cos(x)]
//! h2 = [x]
//! angular = y2.1
//! ```
//!
//! Matrices separate rows by `;` and columns by `,`; a vector may be
//! written as a row or a column. Missing matrices are zero. `#` starts a
//! comment. Optional sections: `dims`, `controller`, `trajectory`,
//! `simulation`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::SysFileError;
use crate::expr::{parse_expr, Expr};
use crate::lie::SystemModel;
use crate::matrix::{split_literal, ExprMatrix};
use crate::simulate::{CubicSpline, SimConfig, Signal, Trajectory, WMode};
use crate::symbols::{Symbol, SymbolTable};
use crate::synthesis::{Case, SynthesisOptions};

/// Final error norm below which a simulation counts as converged.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Everything a system file defines.
#[derive(Clone, Debug)]
pub struct SystemFile {
    pub model: SystemModel,
    pub synthesis: SynthesisOptions,
    pub trajectory: Trajectory,
    /// `None` when the file has no `[simulation]` section.
    pub simulation: Option<SimConfig>,
    pub tolerance: f64,
}

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
    /// 1-based column of the first value character.
    col: usize,
}

struct Section<'a> {
    line: usize,
    entries: Vec<Entry<'a>>,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> SysFileError {
    SysFileError { line, column, message: message.into() }
}

const SECTIONS: [&str; 8] =
    ["dims", "symbols", "operating_point", "dynamics", "outputs", "controller", "trajectory", "simulation"];

fn lex(text: &str) -> Result<BTreeMap<&str, Section<'_>>, SysFileError> {
    let mut sections: BTreeMap<&str, Section> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, indent + 1, "section header must end with `]`"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(line, indent + 2, format!("unknown section `{name}`")));
            }
            if sections.contains_key(name) {
                return Err(err(line, indent + 2, format!("section `{name}` appears twice")));
            }
            sections.insert(name, Section { line, entries: vec![] });
            current = Some(name);
            continue;
        }
        let section = current.ok_or_else(|| err(line, indent + 1, "entry before any section header"))?;
        let eq = content.find('=').ok_or_else(|| err(line, indent + 1, "expected `key = value`"))?;
        let key = content[..eq].trim();
        if key.is_empty() {
            return Err(err(line, indent + 1, "missing key before `=`"));
        }
        let after = &content[eq + 1..];
        let value = after.trim();
        let col = eq + 2 + (after.len() - after.trim_start().len());
        let sec = sections.get_mut(section).unwrap();
        if sec.entries.iter().any(|e| e.key == key) {
            return Err(err(line, indent + 1, format!("`{key}` is set twice in [{section}]")));
        }
        sec.entries.push(Entry { key, value, line, col });
    }
    Ok(sections)
}

struct Ctx<'a> {
    sections: BTreeMap<&'a str, Section<'a>>,
}

impl<'a> Ctx<'a> {
    fn entries(&self, section: &str) -> &[Entry<'a>] {
        self.sections.get(section).map_or(&[], |s| s.entries.as_slice())
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry<'a>> {
        self.entries(section).iter().find(|e| e.key == key)
    }

    fn check_keys(&self, section: &str, allowed: &[&str], prefixes: &[&str]) -> Result<(), SysFileError> {
        for e in self.entries(section) {
            if !allowed.contains(&e.key) && !prefixes.iter().any(|p| e.key.starts_with(p)) {
                return Err(err(e.line, 1, format!("unknown key `{}` in [{section}]", e.key)));
            }
        }
        Ok(())
    }
}

fn names<'a>(e: &Entry<'a>) -> Vec<&'a str> {
    e.value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn number(e: &Entry, text: &str) -> Result<f64, SysFileError> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| err(e.line, e.col, format!("`{}` expects a number, got `{}`", e.key, text.trim())))
}

fn expr_matrix(e: &Entry, table: &SymbolTable) -> Result<Vec<Vec<Expr>>, SysFileError> {
    let rows = split_literal(e.value);
    let lead = e.value.len() - e.value.trim_start().len();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut r = Vec::with_capacity(row.len());
        for lit in row {
            let at = e.col + lead + lit.offset;
            let parsed = parse_expr(lit.text, table).map_err(|pe| err(e.line, at + pe.offset(), pe.to_string()))?;
            r.push(parsed);
        }
        out.push(r);
    }
    Ok(out)
}

fn matrix_of(e: Option<&Entry>, table: &SymbolTable, rows: usize, cols: usize) -> Result<ExprMatrix, SysFileError> {
    let Some(e) = e else { return Ok(ExprMatrix::zeros(rows, cols)) };
    let parsed = expr_matrix(e, table)?;
    let shape = (parsed.len(), parsed.first().map_or(0, Vec::len));
    let shape_ok = shape == (rows, cols) || (rows * cols == 0 && parsed.is_empty());
    if !shape_ok || parsed.iter().any(|r| r.len() != shape.1) {
        return Err(err(
            e.line,
            e.col,
            format!("`{}` must be {rows}x{cols}, got {}x{}", e.key, shape.0, shape.1),
        ));
    }
    if parsed.is_empty() {
        return Ok(ExprMatrix::zeros(rows, cols));
    }
    Ok(ExprMatrix::from_rows(parsed, cols).expect("shape checked"))
}

fn vector_of(e: Option<&Entry>, table: &SymbolTable, len: usize) -> Result<Vec<Expr>, SysFileError> {
    let Some(e) = e else { return Ok(vec![Expr::zero(); len]) };
    let parsed = expr_matrix(e, table)?;
    let flat: Vec<Expr> = if parsed.len() == 1 || parsed.iter().all(|r| r.len() == 1) {
        parsed.into_iter().flatten().collect()
    } else {
        return Err(err(e.line, e.col, format!("`{}` must be a vector", e.key)));
    };
    if flat.len() != len {
        return Err(err(e.line, e.col, format!("`{}` must have {len} entries, got {}", e.key, flat.len())));
    }
    Ok(flat)
}

fn numeric_matrix(e: &Entry, size: usize) -> Result<DMatrix<f64>, SysFileError> {
    let rows = split_literal(e.value);
    if rows.len() == 1 && rows[0].len() == 1 {
        return Ok(DMatrix::identity(size, size) * number(e, rows[0][0].text)?);
    }
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(err(e.line, e.col, format!("`{}` must be a scalar or a {size}x{size} matrix", e.key)));
    }
    let mut m = DMatrix::zeros(size, size);
    for (i, r) in rows.iter().enumerate() {
        for (j, lit) in r.iter().enumerate() {
            m[(i, j)] = number(e, lit.text)?;
        }
    }
    Ok(m)
}

/// Maps `y1.i` / `y2.i` (1-based) to a stacked output index.
fn channel(e: &Entry, label: &str, m1: usize, m2: usize) -> Result<usize, SysFileError> {
    let bad = || err(e.line, e.col, format!("`{label}` is not an output channel (use y1.i or y2.i)"));
    let (block, idx) = label.trim().split_once('.').ok_or_else(bad)?;
    let i: usize = idx.parse().map_err(|_| bad())?;
    match block {
        "y1" if (1..=m1).contains(&i) => Ok(i - 1),
        "y2" if (1..=m2).contains(&i) => Ok(m1 + i - 1),
        _ => Err(bad()),
    }
}

fn signal(e: &Entry) -> Result<Signal, SysFileError> {
    let mut words = e.value.split_whitespace();
    let kind = words.next().unwrap_or("");
    let args: Vec<&str> = words.collect();
    let nums = |args: &[&str]| args.iter().map(|a| number(e, a)).collect::<Result<Vec<f64>, _>>();
    match kind {
        "const" => match nums(&args)?.as_slice() {
            [c] => Ok(Signal::Constant { value: *c }),
            _ => Err(err(e.line, e.col, "`const` takes one value")),
        },
        "sin" => {
            let v = nums(&args)?;
            if v.is_empty() || v.len() > 4 {
                return Err(err(e.line, e.col, "`sin` takes amplitude [frequency [phase [offset]]]"));
            }
            let at = |i: usize, d: f64| v.get(i).copied().unwrap_or(d);
            Ok(Signal::Sinusoid { amplitude: v[0], frequency: at(1, 1.0), phase: at(2, 0.0), offset: at(3, 0.0) })
        }
        "poly" => {
            let v = nums(&args)?;
            if v.is_empty() {
                return Err(err(e.line, e.col, "`poly` needs at least one coefficient"));
            }
            Ok(Signal::Polynomial { coefficients: v })
        }
        "spline" => {
            let mut knots = Vec::new();
            let mut values = Vec::new();
            for a in &args {
                let (t, y) = a.split_once(':').ok_or_else(|| err(e.line, e.col, "spline points are t:y"))?;
                knots.push(number(e, t)?);
                values.push(number(e, y)?);
            }
            CubicSpline::new(knots, values).map(Signal::Spline).map_err(|x| err(e.line, e.col, x.to_string()))
        }
        other => Err(err(e.line, e.col, format!("unknown signal `{other}` (const, sin, poly, spline)"))),
    }
}

/// Parses a system file.
pub fn parse_system_file(text: &str) -> Result<SystemFile, SysFileError> {
    let ctx = Ctx { sections: lex(text)? };
    let sym_sec = ctx.sections.get("symbols").ok_or_else(|| err(1, 1, "missing [symbols] section"))?;
    ctx.check_keys("symbols", &["states", "inputs", "extra", "nonzero"], &[])?;
    ctx.check_keys("dims", &["n", "m1", "m2"], &[])?;
    ctx.check_keys("dynamics", &["f", "G", "H"], &[])?;
    ctx.check_keys("outputs", &["h1", "h2", "Abar1", "Abar2", "Bbar1", "Bbar2", "angular"], &[])?;
    ctx.check_keys("controller", &["gains", "case", "max_order"], &["K"])?;
    ctx.check_keys("simulation", &["T", "dt", "L", "seed", "x0_jitter", "w_mode", "tolerance"], &["x0."])?;

    let list = |key: &str| ctx.get("symbols", key).map(names).unwrap_or_default();
    let states = list("states");
    let inputs = list("inputs");
    let extra = list("extra");
    if states.is_empty() {
        return Err(err(sym_sec.line, 1, "[symbols] must declare `states`"));
    }
    if inputs.is_empty() {
        return Err(err(sym_sec.line, 1, "[symbols] must declare `inputs`"));
    }
    let table = SymbolTable::with_groups(&states, &inputs, &extra).map_err(|e| err(sym_sec.line, 1, e.to_string()))?;
    let (n, m1, m2) = (states.len(), inputs.len(), extra.len());
    for (key, have) in [("n", n), ("m1", m1), ("m2", m2)] {
        if let Some(e) = ctx.get("dims", key) {
            let want = number(e, e.value)?;
            if want != have as f64 {
                return Err(err(e.line, e.col, format!("{key} = {want} but {have} symbols are declared")));
            }
        }
    }
    let lookup = |e: &Entry, name: &str| -> Result<Symbol, SysFileError> {
        table
            .lookup(name.trim())
            .map(|(s, _)| s)
            .ok_or_else(|| err(e.line, e.col, format!("undeclared symbol `{}`", name.trim())))
    };
    let nonzero: BTreeSet<Symbol> = match ctx.get("symbols", "nonzero") {
        Some(e) => names(e).iter().map(|s| lookup(e, s)).collect::<Result<_, _>>()?,
        None => BTreeSet::new(),
    };
    let mut operating_point = BTreeMap::new();
    for e in ctx.entries("operating_point") {
        let s = table
            .lookup(e.key)
            .map(|(s, _)| s)
            .ok_or_else(|| err(e.line, 1, format!("undeclared symbol `{}`", e.key)))?;
        operating_point.insert(s, number(e, e.value)?);
    }

    let dynamics = |k: &str| ctx.get("dynamics", k);
    let outputs = |k: &str| ctx.get("outputs", k);
    let mut angular = BTreeSet::new();
    if let Some(e) = outputs("angular") {
        for label in names(e) {
            angular.insert(channel(e, label, m1, m2)?);
        }
    }
    let model = SystemModel {
        name: "system".to_string(),
        state: states.iter().map(|s| table.lookup(s).unwrap().0).collect(),
        inputs: inputs.iter().map(|s| table.lookup(s).unwrap().0).collect(),
        extra: extra.iter().map(|s| table.lookup(s).unwrap().0).collect(),
        f: vector_of(dynamics("f"), &table, n)?,
        g: matrix_of(dynamics("G"), &table, n, m1)?,
        h: matrix_of(dynamics("H"), &table, n, m2)?,
        h1: vector_of(outputs("h1"), &table, m1)?,
        h2: vector_of(outputs("h2"), &table, m2)?,
        abar1: matrix_of(outputs("Abar1"), &table, m1, m1)?,
        abar2: matrix_of(outputs("Abar2"), &table, m2, m1)?,
        bbar1: matrix_of(outputs("Bbar1"), &table, m1, m2)?,
        bbar2: matrix_of(outputs("Bbar2"), &table, m2, m2)?,
        operating_point,
        nonzero,
        angular,
        table: table.clone(),
    };
    if let Err(e) = model.validate() {
        let line = ctx.sections.get("dynamics").or(ctx.sections.get("outputs")).map_or(1, |s| s.line);
        return Err(err(line, 1, e.to_string()));
    }

    let mut synthesis = SynthesisOptions::default();
    if let Some(e) = ctx.get("controller", "case") {
        synthesis.case = match e.value {
            "1" => Some(Case::Regular),
            "2" => Some(Case::Singular),
            "auto" => None,
            other => return Err(err(e.line, e.col, format!("case must be 1, 2 or auto, got `{other}`"))),
        };
    }
    if let Some(e) = ctx.get("controller", "max_order") {
        synthesis.max_order =
            Some(e.value.parse().map_err(|_| err(e.line, e.col, "max_order expects a nonnegative integer"))?);
    }
    let mut indexed: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    for e in ctx.entries("controller").iter().filter(|e| e.key.starts_with('K')) {
        let i: usize = e.key[1..].parse().map_err(|_| err(e.line, 1, format!("unknown key `{}`", e.key)))?;
        indexed.insert(i, numeric_matrix(e, m1)?);
    }
    if let Some(e) = ctx.get("controller", "gains") {
        if !indexed.is_empty() {
            return Err(err(e.line, 1, "use either `gains` or K0, K1, ..., not both"));
        }
        synthesis.gains = Some(vec![numeric_matrix(e, m1)?]);
    } else if !indexed.is_empty() {
        if indexed.keys().copied().ne(0..indexed.len()) {
            let line = ctx.sections["controller"].line;
            return Err(err(line, 1, "gain indices must run K0, K1, ... without gaps"));
        }
        synthesis.gains = Some(indexed.into_values().collect());
    }

    let mut channels = vec![None; m1 + m2];
    for e in ctx.entries("trajectory") {
        let j = channel(e, e.key, m1, m2).map_err(|x| SysFileError { column: 1, ..x })?;
        channels[j] = Some(signal(e)?);
    }
    let trajectory = Trajectory::new(channels);

    let mut tolerance = DEFAULT_TOLERANCE;
    let simulation = match ctx.sections.get("simulation") {
        None => None,
        Some(_) => {
            let mut cfg = SimConfig::default();
            for e in ctx.entries("simulation") {
                match e.key {
                    "T" => cfg.t_final = number(e, e.value)?,
                    "dt" => cfg.dt = number(e, e.value)?,
                    "L" => cfg.l = numeric_matrix(e, m1 + m2)?,
                    "seed" => cfg.seed = e.value.parse().map_err(|_| err(e.line, e.col, "seed expects an integer"))?,
                    "x0_jitter" => cfg.x0_jitter = number(e, e.value)?,
                    "tolerance" => tolerance = number(e, e.value)?,
                    "w_mode" => {
                        cfg.w_mode = match e.value {
                            "free" => WMode::Free,
                            "zero" => WMode::Zero,
                            other => return Err(err(e.line, e.col, format!("w_mode is free or zero, got `{other}`"))),
                        }
                    }
                    key => {
                        let name = &key["x0.".len()..];
                        lookup(e, name)?;
                        cfg.x0.insert(name.to_string(), number(e, e.value)?);
                    }
                }
            }
            if !(cfg.dt > 0.0) || !(cfg.t_final >= 0.0) {
                let line = ctx.sections["simulation"].line;
                return Err(err(line, 1, "dt must be positive and T nonnegative"));
            }
            Some(cfg)
        }
    };
    Ok(SystemFile { model, synthesis, trajectory, simulation, tolerance })
}
