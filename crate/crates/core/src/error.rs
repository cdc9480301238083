use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("undeclared variable `{name}` at line {line}, column {column}")]
    UndeclaredVariable {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("non-polynomial construct at line {line}, column {column}: {message}")]
    NonPolynomial {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("component {component} has a constant term {value}; the origin must be an equilibrium")]
    ConstantTerm { component: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter vector has length {got}, family has {expected} free parameters")]
    ThetaLength { expected: usize, got: usize },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("eigenvalue iteration did not converge (best residual {residual:e})")]
    EigenNonConvergence { residual: f64 },

    #[error("matrix exponential overflow (norm {norm:e}); reduce the step size")]
    ExpmOverflow { norm: f64 },

    #[error("trajectory diverged at t = {time} (norm {norm:e})")]
    Divergence {
        time: f64,
        norm: f64,
        last_state: Vec<f64>,
    },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("vector field vanishes at non-zero sample point {point:?}")]
    VanishingField { point: Vec<f64> },

    #[error("degree bound violated: {0}")]
    DegreeBound(String),

    #[error("center synthesis requires an even state dimension, got n = {0}")]
    OddDimension(usize),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
