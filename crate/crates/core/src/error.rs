use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point outside the domain: {0}")]
    Infeasible(String),

    #[error("block {block} has zero operator norm; dual step size sigma = gamma/||A_i|| is undefined")]
    ZeroBlockNorm { block: usize },

    #[error("step sizes violate p_i^-1 tau sigma_i ||A_i||^2 <= gamma^2 at block {block} (ratio {ratio})")]
    StepSizeViolation { block: usize, ratio: f64 },

    #[error("non-finite iterate at iteration {iter}")]
    Divergence { iter: u64 },

    #[error("missing reference solution")]
    MissingReference,

    #[error("method not applicable: {0}")]
    Inapplicable(String),

    #[error("reference certification failed after {iters} iterations (best residual {best_residual:e})")]
    Certification { iters: u64, best_residual: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
