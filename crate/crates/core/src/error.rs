use thiserror::Error;

/// Errors produced while building or running a model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error(
        "arrival variance infeasible: noise amplitude {amplitude} exceeds offset {offset}; \
         largest feasible sigma_a_sq is below {max_sigma_a_sq}"
    )]
    InfeasibleVariance {
        offset: u64,
        amplitude: u64,
        max_sigma_a_sq: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("cannot merge run summaries: {0}")]
    Merge(String),

    #[error("oracle did not converge after {iterations} iterations (last L1 change {last_change:e})")]
    OracleFailure { iterations: usize, last_change: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
