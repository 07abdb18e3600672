use thiserror::Error;

/// Errors raised by the library. Verdicts (not invariant, singular) are
/// reported through [`crate::invariance::InvarianceReport`], not here.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("variable x{index} out of range for dimension {n}")]
    VariableOutOfRange { index: usize, n: usize },

    #[error("domain error in `{node}`: {kind}")]
    Domain { kind: DomainKind, node: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("invalid chart: {0}")]
    Chart(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("vector field is not a section of D: component x{component} = {value:e} at {point:?}")]
    NotInDistribution {
        component: usize,
        value: f64,
        point: Vec<f64>,
    },

    #[error("least-squares residual {residual:e} exceeds tolerance {tolerance:e} at node {node} ({context})")]
    Residual {
        node: usize,
        residual: f64,
        tolerance: f64,
        context: &'static str,
    },

    #[error("matrix is singular or ill-conditioned (condition {condition:e}) at {point:?}")]
    Singular { condition: f64, point: Vec<f64> },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("unsupported distribution: {0}")]
    Distribution(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    NonFinite,
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::LogNonPositive => "log of non-positive value",
            DomainKind::SqrtNegative => "sqrt of negative value",
            DomainKind::NonFinite => "non-finite result",
        };
        f.write_str(s)
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
