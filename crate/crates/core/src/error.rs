use thiserror::Error;

/// Errors raised across the framework.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown task family `{0}`")]
    UnknownFamily(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("training diverged at iteration {iteration}: mean |ratio - 1| = {mean_deviation:.3}")]
    Divergence { iteration: usize, mean_deviation: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
