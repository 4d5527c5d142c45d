use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid mesh, boundary or material setup.
    #[error("setup error: {0}")]
    Setup(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    /// The Newton iteration hit its iteration cap. Carries the state with the
    /// smallest residual seen so the caller can retry (e.g. with ramping).
    #[error("newton did not converge after {iterations} iterations (relative residual {relative_residual:.3e})")]
    NotConverged {
        iterations: usize,
        relative_residual: f64,
        best_state: Vec<f64>,
    },

    #[error("ramp stage {stage} (scale {scale}) failed: {source}")]
    RampStage {
        stage: usize,
        scale: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
