use std::path::PathBuf;

/// Errors produced anywhere in the sampling engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("step index {t} outside 1..={num_steps}")]
    StepOutOfRange { t: usize, num_steps: usize },

    #[error("singular or non positive-definite matrix: {0}")]
    Singular(String),

    #[error("non-finite state at step {t}")]
    NonFinite { t: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error originates from user configuration rather than a
    /// runtime failure; the CLI maps this onto its exit code.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Format { .. } | Error::InvalidArgument(_) => true,
            Error::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
