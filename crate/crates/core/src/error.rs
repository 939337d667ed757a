use thiserror::Error;

pub type Result<T, E = RrmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RrmError {
    /// A configuration value is out of range or inconsistent with another.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A function was called outside of its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced (or was fed) a non-finite value.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// An operation was attempted in a state that does not support it.
    #[error("invalid state: {0}")]
    State(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

impl RrmError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        RrmError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        RrmError::Numeric {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        RrmError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, reason: impl ToString) -> Self {
        RrmError::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code used by the `rrm` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            RrmError::Config { .. } => 3,
            RrmError::State(_) => 4,
            RrmError::Numeric { .. } => 5,
            RrmError::Domain(_) => 6,
            RrmError::Io { .. } | RrmError::Format { .. } => 7,
        }
    }
}
