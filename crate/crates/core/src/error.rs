use std::fmt;

use thiserror::Error;

/// Which part of a problem produced a bad evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Objective,
    Inequality(usize),
    Equality(usize),
    Gradient,
    InequalityJacobian(usize),
    EqualityJacobian(usize),
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Objective => write!(f, "objective"),
            Component::Inequality(i) => write!(f, "inequality constraint {i}"),
            Component::Equality(j) => write!(f, "equality constraint {j}"),
            Component::Gradient => write!(f, "objective gradient"),
            Component::InequalityJacobian(i) => write!(f, "gradient of inequality constraint {i}"),
            Component::EqualityJacobian(j) => write!(f, "gradient of equality constraint {j}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite value in {0}")]
    NonFinite(Component),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bound undefined: {0}")]
    UndefinedBound(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
