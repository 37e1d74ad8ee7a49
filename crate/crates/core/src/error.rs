use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid arity {n}: need at least 2 interacting firms")]
    InvalidArity { n: usize },

    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid turnover rate {0}: must lie in [0, 1)")]
    InvalidTurnover(f64),

    #[error("invalid redistribution constant C = {0}: must be positive")]
    InvalidConstant(f64),

    #[error("invalid configuration: field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("hypoexponential rates are not distinct (rate {0} repeats)")]
    DegenerateSpec(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("recording stride {0} != 1: growth rates need consecutive snapshots")]
    StrideMismatch(usize),

    #[error("operation requires a distributed turnover profile")]
    ModeMismatch,

    #[error("samples have zero spread; scale parameter would be 0")]
    ZeroScale,

    #[error("tail above xmin has {found} samples, need at least {needed}")]
    InsufficientTail { found: usize, needed: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
