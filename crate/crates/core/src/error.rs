use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible topology: {0}")]
    InfeasibleTopology(String),

    #[error("graph is disconnected after {attempts} attempts")]
    Disconnected { attempts: usize },

    #[error("non-finite entries in matrix passed to eigensolver")]
    NonFiniteMatrix,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("iterate diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("stepsize conditions cannot be met: {0}")]
    EmptyParameterSet(String),

    #[error("configuration rejected: {0}")]
    ConfigRejected(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
