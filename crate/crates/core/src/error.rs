use std::path::PathBuf;

/// Errors produced by the pruning engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file is not in the expected on-disk layout.
    #[error("format error: {0}")]
    Format(String),

    /// Values are present but unusable (NaN, infinity, zero-norm rows).
    #[error("data error: {0}")]
    Data(String),

    /// Matrix and item manifest disagree, or a manifest is malformed.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Cluster model does not belong to the matrix it is applied to.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Argument outside the mathematical domain of a metric.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
