use std::path::PathBuf;

use fire_core::baselines::BaselineError;
use fire_core::metrics::MetricsError;
use fire_core::nn::NnError;
use fire_core::orthogonalize::OrthoError;
use fire_core::params::ParamsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid dataset spec: {0}")]
    Dataset(String),
    #[error("{path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Records { path: PathBuf, reason: String },
    #[error("{0}: no run records found")]
    EmptyDir(PathBuf),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
