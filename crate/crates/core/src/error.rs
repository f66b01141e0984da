use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} = {value} (limit {limit})")]
    Capacity {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("cannot build system: {0}")]
    Construction(String),

    /// The normal-equations matrix failed the rank test.
    #[error("singular system{}: condition estimate {condition:.3e}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Singular {
        condition: f64,
        context: Option<String>,
    },

    #[error("oracle kind not supported here: {0}")]
    UnsupportedOracle(&'static str),

    #[error("degenerate urn: {0}")]
    DegenerateUrn(String),

    #[error("bootstrap estimation failed: fewer than 2 of {replicates} replicates were solvable")]
    EstimationFailed { replicates: usize },

    #[error("linear model fit failed: {0}")]
    Fit(String),

    #[error("parse error at row {row}, column {column} ({name}): {message}")]
    Parse {
        row: usize,
        column: usize,
        name: String,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
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

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attaches a context label to a singular-system error; other errors pass through.
    pub fn with_singular_context(self, label: impl Into<String>) -> Self {
        match self {
            Error::Singular { condition, .. } => Error::Singular {
                condition,
                context: Some(label.into()),
            },
            other => other,
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, Error::Singular { .. })
    }
}
