//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared symbol `{name}` at offset {offset}")]
    UndeclaredSymbol { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UndeclaredSymbol { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("no value for symbol `{0}`")]
    MissingSymbol(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("symbol `{0}` declared twice")]
    DuplicateSymbol(String),
    #[error("`{0}` is not a valid symbol name")]
    InvalidName(String),
    #[error("undeclared symbol `{0}`")]
    UndeclaredSymbol(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("max order exceeded: output {output} shows no input up to order {max_order}")]
    MaxOrderExceeded { output: usize, max_order: usize },
    #[error("output block {0} is empty")]
    EmptyBlock(u8),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("case mismatch: {0}")]
    CaseMismatch(String),
    #[error("gain K{index} is not symmetric positive definite")]
    GainNotPd { index: usize },
    #[error("expected {expected} gain matrices of size {size}x{size}, got {got}")]
    GainShape { expected: usize, size: usize, got: usize },
    #[error("N1 singular at the operating point (|det| = {det:e})")]
    N1Singular { det: f64 },
    #[error("not applicable; use case 1 (decoupling matrix has full rank)")]
    NotApplicable,
    #[error("not column-degenerate: rank {rank} < {m1} but no column of A1 vanishes identically")]
    NotColumnDegenerate { rank: usize, m1: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("divergence: non-finite state at step {step}")]
    Divergence { step: usize },
    #[error("near-singular Γ: condition number {cond:e} at t = {t} (state {state:?})")]
    NearSingular { cond: f64, t: f64, state: Vec<f64> },
    #[error("singular coordinate `{name}` reached {value:e} at t = {t}")]
    SingularCoordinate { name: String, value: f64, t: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
}

/// A problem in a system-definition file, located by 1-based line and column.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct SysFileError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}
