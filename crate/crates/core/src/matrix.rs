//! Dense matrices of expressions and the numeric checks run on their
//! evaluations.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{EvalError, ModelError, ParseError};
use crate::expr::{parse_expr, simplify, sum, Assignment, Expr};
use crate::symbols::{Symbol, SymbolTable};

/// Row-major matrix of [`Expr`] entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Expr>,
}

impl ExprMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ExprMatrix { rows, cols, data: vec![Expr::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Expr::one());
        }
        m
    }

    /// Builds a matrix from rows; every row must have `cols` entries.
    pub fn from_rows(rows: Vec<Vec<Expr>>, cols: usize) -> Result<Self, ModelError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != cols {
                return Err(ModelError::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Ok(ExprMatrix { rows: n, cols, data })
    }

    pub fn column(v: Vec<Expr>) -> Self {
        ExprMatrix { rows: v.len(), cols: 1, data: v }
    }

    pub fn row_vector(v: Vec<Expr>) -> Self {
        ExprMatrix { rows: 1, cols: v.len(), data: v }
    }

    /// Parses rows of entry strings against `table`.
    pub fn parse(rows: &[Vec<&str>], cols: usize, table: &SymbolTable) -> Result<Self, ParseError> {
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            out.push(r.iter().map(|s| parse_expr(s, table)).collect::<Result<Vec<_>, _>>()?);
        }
        Ok(Self::from_rows(out, cols).expect("caller supplies rectangular rows"))
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, e: Expr) {
        self.data[i * self.cols + j] = e;
    }

    pub fn row(&self, i: usize) -> &[Expr] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<Expr> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn entries(&self) -> &[Expr] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<Expr>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> Self {
        ExprMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }

    pub fn simplified(&self) -> Self {
        self.map(simplify)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    /// Simplified product.
    pub fn mul(&self, other: &ExprMatrix) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let terms = (0..self.cols)
                    .map(|k| self.get(i, k).clone() * other.get(k, j).clone())
                    .collect();
                out.set(i, j, simplify(&sum(terms)));
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Expr]) -> Vec<Expr> {
        self.mul(&ExprMatrix::column(v.to_vec())).data
    }

    /// Simplified sum.
    pub fn add(&self, other: &ExprMatrix) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shapes differ");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| simplify(&(a.clone() + b.clone())))
            .collect();
        ExprMatrix { rows: self.rows, cols: self.cols, data }
    }

    /// Simplified difference.
    pub fn sub(&self, other: &ExprMatrix) -> Self {
        self.add(&other.map(|e| -e.clone()))
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            for (jj, &j) in cols.iter().enumerate() {
                out.set(i, jj, self.get(i, j).clone());
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&i| self.row(i).to_vec()).collect();
        ExprMatrix { rows: rows.len(), cols: self.cols, data }
    }

    pub fn hstack(&self, other: &ExprMatrix) -> Self {
        assert_eq!(self.rows, other.rows, "row counts differ");
        let mut out = Self::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(i, j, self.get(i, j).clone());
            }
            for j in 0..other.cols {
                out.set(i, self.cols + j, other.get(i, j).clone());
            }
        }
        out
    }

    pub fn vstack(&self, other: &ExprMatrix) -> Self {
        assert_eq!(self.cols, other.cols, "column counts differ");
        let mut data = self.data.clone();
        data.extend(other.data.iter().cloned());
        ExprMatrix { rows: self.rows + other.rows, cols: self.cols, data }
    }

    /// `[[a, b], [c, d]]`.
    pub fn blocks(a: &ExprMatrix, b: &ExprMatrix, c: &ExprMatrix, d: &ExprMatrix) -> Self {
        a.hstack(b).vstack(&c.hstack(d))
    }

    pub fn submatrix(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        let r: Vec<usize> = rows.collect();
        let c: Vec<usize> = cols.collect();
        self.select_rows(&r).select_columns(&c)
    }

    pub fn substitute(&self, map: &BTreeMap<Symbol, Expr>) -> Self {
        self.map(|e| e.substitute(map))
    }

    /// Sets the given symbols to zero and simplifies every entry.
    pub fn at_zero(&self, syms: &[Symbol]) -> Self {
        self.map(|e| e.at_zero(syms))
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.data.iter().all(Expr::is_zero)
    }

    pub fn contains_any(&self, syms: &[Symbol]) -> bool {
        self.data.iter().any(|e| e.contains_any(syms))
    }

    /// Simplified determinant by cofactor expansion along the first row.
    pub fn det(&self) -> Expr {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        simplify(&self.det_raw())
    }

    fn det_raw(&self) -> Expr {
        match self.rows {
            0 => Expr::one(),
            1 => self.get(0, 0).clone(),
            2 => {
                self.get(0, 0).clone() * self.get(1, 1).clone()
                    - self.get(0, 1).clone() * self.get(1, 0).clone()
            }
            n => {
                let mut terms = Vec::new();
                for j in 0..n {
                    let a = self.get(0, j);
                    if a.is_zero() {
                        continue;
                    }
                    let minor = self.minor(0, j).det_raw();
                    let t = a.clone() * minor;
                    terms.push(if j % 2 == 0 { t } else { -t });
                }
                sum(terms)
            }
        }
    }

    fn minor(&self, row: usize, col: usize) -> Self {
        let r: Vec<usize> = (0..self.rows).filter(|&i| i != row).collect();
        let c: Vec<usize> = (0..self.cols).filter(|&j| j != col).collect();
        self.select_rows(&r).select_columns(&c)
    }

    /// Adjugate (transposed cofactor matrix), simplified.
    pub fn adjugate(&self) -> Self {
        let n = self.rows;
        assert_eq!(n, self.cols, "adjugate of a non-square matrix");
        if n == 1 {
            return Self::identity(1);
        }
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let c = self.minor(i, j).det_raw();
                let c = if (i + j) % 2 == 0 { c } else { -c };
                out.set(j, i, simplify(&c));
            }
        }
        out
    }

    /// Symbolic inverse `adj(M)/det(M)`, simplified entrywise.
    pub fn inverse(&self) -> Self {
        let det = self.det();
        self.adjugate().map(|a| simplify(&(a.clone() / det.clone())))
    }

    pub fn eval(&self, values: &Assignment) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self.get(i, j).eval(values)?;
            }
        }
        Ok(out)
    }

    /// Entries printed in the expression grammar, one inner vector per row.
    pub fn to_strings(&self) -> Vec<Vec<String>> {
        (0..self.rows).map(|i| self.row(i).iter().map(|e| e.to_string()).collect()).collect()
    }

    /// Inverse of [`ExprMatrix::to_strings`].
    pub fn from_strings(rows: &[Vec<String>], cols: usize, table: &SymbolTable) -> Result<Self, ModelError> {
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            out.push(r.iter().map(|s| parse_expr(s, table)).collect::<Result<Vec<_>, _>>()?);
        }
        Self::from_rows(out, cols)
    }
}

impl fmt::Display for ExprMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for i in 0..self.rows {
            if i > 0 {
                f.write_str("; ")?;
            }
            for (j, e) in self.row(i).iter().enumerate() {
                if j > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{e}")?;
            }
        }
        f.write_str("]")
    }
}

/// One entry of a matrix literal and its byte offset in the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiteralEntry<'a> {
    pub text: &'a str,
    pub offset: usize,
}

/// Splits `[a, b; c, d]` (brackets optional) into rows at top-level `;` and
/// entries at top-level `,`. Separators inside parentheses are ignored.
pub fn split_literal(text: &str) -> Vec<Vec<LiteralEntry<'_>>> {
    let trimmed = text.trim();
    let lead = text.len() - text.trim_start().len();
    let (body, base) = match trimmed.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
        Some(inner) => (inner, lead + 1),
        None => (trimmed, lead),
    };
    if body.trim().is_empty() {
        return vec![];
    }
    let entry = |from: usize, to: usize| {
        let raw = &body[from..to];
        let skip = raw.len() - raw.trim_start().len();
        LiteralEntry { text: raw.trim(), offset: base + from + skip }
    };
    let mut rows = vec![vec![]];
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' | ';' if depth == 0 => {
                rows.last_mut().unwrap().push(entry(start, i));
                if c == ';' {
                    rows.push(vec![]);
                }
                start = i + 1;
            }
            _ => {}
        }
    }
    rows.last_mut().unwrap().push(entry(start, body.len()));
    rows
}

impl ExprMatrix {
    /// Parses a matrix literal such as `[cos(x), 0; sin(x), 0]`.
    pub fn parse_literal(text: &str, table: &SymbolTable) -> Result<Self, ModelError> {
        let rows = split_literal(text);
        let cols = rows.first().map_or(0, Vec::len);
        let parsed = rows
            .iter()
            .map(|r| r.iter().map(|e| parse_expr(e.text, table)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(parsed, cols)
    }
}

/// Evaluates each entry of a vector.
pub fn eval_vec(v: &[Expr], values: &Assignment) -> Result<Vec<f64>, EvalError> {
    v.iter().map(|e| e.eval(values)).collect()
}

pub fn simplify_vec(v: &[Expr]) -> Vec<Expr> {
    v.iter().map(simplify).collect()
}

/// Numeric rank with singular values below `rel_tol * sigma_max` treated as zero.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if !max.is_finite() || max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// 2-norm condition number; infinite for singular or non-finite input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `|det M|` divided by the product of the row norms (Hadamard ratio, in [0, 1]).
pub fn relative_det(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "determinant of a non-square matrix");
    if m.is_empty() {
        return 1.0;
    }
    let norms: f64 = m.row_iter().map(|r| r.norm()).product();
    if norms == 0.0 || !norms.is_finite() {
        return 0.0;
    }
    m.determinant().abs() / norms
}

/// Symmetric with all eigenvalues above `tol`.
pub fn is_spd(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().all(|&l| l > tol)
}
