use std::fmt;

use serde::{Deserialize, Serialize};

/// Byte range into an expression source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        SourceSpan { start, end }
    }

    pub fn join(self, other: SourceSpan) -> SourceSpan {
        SourceSpan::new(self.start.min(other.start), self.end.max(other.end))
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Errors raised while parsing or evaluating an expression.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {}: {message}", span.start)]
    Syntax { span: SourceSpan, message: String },
    #[error("unknown identifier `{name}` at {span}")]
    UnknownIdentifier { name: String, span: SourceSpan },
    #[error("variable `{name}` at {span} is out of range for dimension {dimension}")]
    VariableOutOfRange {
        name: String,
        span: SourceSpan,
        dimension: usize,
    },
    #[error("domain error in {op} at {span}: argument {value}")]
    Domain {
        op: &'static str,
        span: SourceSpan,
        value: f64,
    },
    #[error("expected {expected} coordinates, got {got}")]
    Arity { expected: usize, got: usize },
}

impl ExprError {
    pub fn span(&self) -> Option<SourceSpan> {
        match self {
            ExprError::Syntax { span, .. }
            | ExprError::UnknownIdentifier { span, .. }
            | ExprError::VariableOutOfRange { span, .. }
            | ExprError::Domain { span, .. } => Some(*span),
            ExprError::Arity { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("derivative order {requested} exceeds jet order {order}")]
    OrderExceeded { requested: usize, order: usize },
    #[error("zero-section violation: F(v) = {norm:e} is below the guard {guard:e}")]
    ZeroSection { norm: f64, guard: f64 },
    #[error("fundamental tensor is not positive-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("Legendre solve did not converge after {iterations} iterations (residual {residual:e})")]
    LegendreNonConvergence { iterations: usize, residual: f64 },
    #[error("trajectory left the validity box at t = {time} (x = {x:?})")]
    LeftValidityBox { time: f64, x: Vec<f64> },
    #[error("step size underflow at t = {time} (dt = {dt:e})")]
    StepUnderflow { time: f64, dt: f64 },
    #[error("graph coordinates degenerate at t = {time} (smallest singular value {sigma:e})")]
    GraphDegenerate { time: f64, sigma: f64 },
    #[error("velocity form {0}")]
    VelocityForm(String),
    #[error("degenerate flag: denominator {denominator:e}")]
    DegenerateFlag { denominator: f64 },
    #[error("Darboux defect {defect:e} exceeds budget {budget:e}")]
    DarbouxDrift { defect: f64, budget: f64 },
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("metric failed validation: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
