use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("normalization error: feature `{feature}` has zero range on the training split")]
    Normalization { feature: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite loss at batch index {index}")]
    NonFiniteLoss { index: usize },

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("authorization error: {0}")]
    Authorization(String),

    #[error("state error: {0}")]
    State(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input rather than an internal failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Training { .. } | Error::Io(_)
        )
    }
}
