use std::path::PathBuf;

/// Crate-wide error type.
///
/// Shape errors carry a human-readable dimension report. Cheap elementwise
/// tensor arithmetic panics on shape mismatch instead (programming error);
/// the structured operations (convolutions, pyramids, losses, I/O, training)
/// return `Result`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {report}")]
    ShapeMismatch { context: String, report: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("image {width}x{height} too small for {levels} pyramid levels")]
    PyramidTooSmall {
        width: usize,
        height: usize,
        levels: usize,
    },

    #[error("malformed {format} file {path}: {reason}")]
    MalformedImage {
        format: &'static str,
        path: String,
        reason: String,
    },

    #[error("checkpoint error at {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },

    #[error("gradient audit failed: worst relative error {worst:.3e} over tolerance")]
    AuditFailed { worst: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>, parts: &[(&str, &[usize])]) -> Self {
        let dims: Vec<String> = parts
            .iter()
            .map(|(name, shape)| format!("{name}={shape:?}"))
            .collect();
        Error::ShapeMismatch {
            context: context.into(),
            report: dims.join(", "),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
