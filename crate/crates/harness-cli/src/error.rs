use std::path::PathBuf;

use classical_multilat::MultilatError;
use ssl_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid configuration or arguments; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// The experiment ran but could not produce a result; exit code 3.
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("no test trials to report")]
    EmptyReport,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Multilat(#[from] MultilatError),
    #[error(transparent)]
    Sim(#[from] acoustic_sim::SimError),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Model(ModelError::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub type HarnessResult<T> = Result<T, HarnessError>;
