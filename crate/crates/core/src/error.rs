use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    DimensionMismatch {
        left_h: usize,
        left_w: usize,
        right_h: usize,
        right_w: usize,
    },

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("backend error{}: {message}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Backend {
        context: Option<String>,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("no evaluation samples")]
    NoEvaluationSamples,

    #[error("report error: {0}")]
    Report(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn backend(message: impl Into<String>) -> Self {
        Error::Backend {
            context: None,
            message: message.into(),
        }
    }

    /// Attaches context (e.g. a frame index) to backend errors; other variants pass through.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::Backend { context, message } => {
                let ctx = ctx.into();
                let context = Some(match context {
                    Some(inner) => format!("{ctx}: {inner}"),
                    None => ctx,
                });
                Error::Backend { context, message }
            }
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
