use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A pivot of the (block) Cholesky factorization was non-positive. The
    /// block row is 1-based.
    #[error("matrix is not positive definite (failed at block row {block_row})")]
    NotPositiveDefinite { block_row: usize },

    #[error("iteration did not converge after {iterations} iterations")]
    Diverged { iterations: usize, last: Vec<f64> },

    #[error("all importance weights are zero")]
    DegenerateSample,

    #[error("only {found} exceedances above the threshold, need at least {needed}")]
    InsufficientTail { found: usize, needed: usize },

    #[error("chain is constant, autocorrelation undefined")]
    ConstantChain,

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("panel {panel}: {source}")]
    Panel {
        panel: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
