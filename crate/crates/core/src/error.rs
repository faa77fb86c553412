use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AevbError>;

#[derive(Debug, Error)]
pub enum AevbError {
    /// Two operands whose shapes do not fit together.
    #[error("{op}: shape mismatch between {left} and {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    /// A quantity that must be finite came out NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite {
        context: String,
        /// `examples_seen` of the last state known to be finite, if training.
        last_good: Option<u64>,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("sampler diverged: {0}")]
    Divergence(String),
}

impl AevbError {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        AevbError::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        AevbError::NonFinite {
            context: context.into(),
            last_good: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AevbError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numeric blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, AevbError::NonFinite { .. } | AevbError::Divergence(_))
    }
}
