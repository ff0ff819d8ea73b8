use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    /// `row` is the 1-based data row (header excluded) in the source file.
    #[error("integrity error at row {row}: {message}")]
    Integrity { row: usize, message: String },

    #[error("value error: {0}")]
    Value(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("infeasible dispatch: need {need:.3} MW exceeds fleet capacity {capacity:.3} MW (deficit {deficit:.3} MW)")]
    Infeasible {
        need: f64,
        capacity: f64,
        deficit: f64,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario {context}: {source}")]
    Scenario {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_window(self, index: usize) -> Self {
        Error::Window {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_scenario(self, context: impl Into<String>) -> Self {
        Error::Scenario {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
