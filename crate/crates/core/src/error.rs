use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("improper posterior: {0}")]
    ImproperPosterior(String),

    #[error("degenerate residuals: {0}")]
    DegenerateResidual(String),

    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty draws: {0}")]
    EmptyDraws(String),

    #[error("chain aborted at iteration {iteration} while updating {parameter}: {source}")]
    ChainAborted {
        iteration: usize,
        parameter: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("key mismatch, missing pairs: {0}")]
    KeyMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Validation-type errors map to CLI exit code 2, everything else to 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::InvalidConfig(_)
                | Error::InvalidData(_)
                | Error::Parse { .. }
                | Error::KeyMismatch(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
