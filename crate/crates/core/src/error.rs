use std::path::PathBuf;

use skanet_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("frequency {freq_hz} Hz aliases at sample rate {sample_rate_hz} Hz")]
    Aliasing { freq_hz: f64, sample_rate_hz: f64 },
    #[error("signal has zero power")]
    ZeroPower,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corrupt file {path}: {field}")]
    Corrupt { path: PathBuf, field: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, field: impl Into<String>) -> Self {
        Error::Corrupt { path: path.into(), field: field.into() }
    }
}
