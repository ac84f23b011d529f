use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("residual is undefined: the two distributions coincide")]
    DegenerateResidual,

    #[error("distributions have disjoint supports (total variation 1)")]
    DegenerateSupport,

    #[error("draft token {token} has zero probability under the draft distribution")]
    InvalidDraft { token: u32 },

    #[error("gamma {gamma} is below the validity threshold (residual entry {residual_entry:e})")]
    InvalidGamma { gamma: f64, residual_entry: f64 },

    #[error("size limit exceeded: {what} = {size} > cap {cap}")]
    SizeLimit { what: &'static str, size: usize, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed draft set: {0}")]
    Structure(String),

    #[error("linear program failure: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),
}
