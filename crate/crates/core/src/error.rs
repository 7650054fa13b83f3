use std::path::PathBuf;

/// Errors raised anywhere in the localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An axis of an operand does not have the extent the operation needs.
    #[error("{op}: dimension mismatch on axis {axis} (expected {expected}, found {found})")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    /// Two operands whose shapes must agree do not.
    #[error("{op}: incompatible shapes {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Network input whose spatial size is not a multiple of the total stride.
    #[error("input size {height}x{width} is not a multiple of {multiple}")]
    InputSize {
        height: usize,
        width: usize,
        multiple: usize,
    },

    #[error("{op}: non-finite value ({detail})")]
    Numeric { op: String, detail: String },

    #[error("malformed {}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
