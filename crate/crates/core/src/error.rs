use thiserror::Error;

/// Errors raised by the MAST engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MastError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all entries of a softmax row are masked")]
    EmptyMask,

    #[error("velocity of agent {agent} has norm {norm} exceeding u_max {u_max}")]
    VelocityLimit { agent: usize, norm: f64, u_max: f64 },

    #[error("rejection sampling gave up after {attempts} attempts: {what}")]
    Sampling { what: String, attempts: usize },

    #[error("observation underdetermined: {0}")]
    Observation(String),

    #[error("weights file: {0}")]
    Weights(String),

    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for MastError {
    fn from(err: std::io::Error) -> Self {
        MastError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MastError>;
