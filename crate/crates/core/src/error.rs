use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    Convergence { sweeps: usize, off_diagonal: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("line {line}: expected {expected} values, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task {task}, {stage}: {source}")]
    Training {
        task: usize,
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error category, used for CLI exit codes and the C status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::InvalidDimension(_)
            | Error::Shape(_)
            | Error::LabelRange { .. }
            | Error::Format { .. }
            | Error::RowLength { .. }
            | Error::MissingFile(_)
            | Error::Io { .. }
            | Error::UndefinedMetric(_) => ErrorClass::Data,
            Error::NonFinite(_) | Error::Convergence { .. } => ErrorClass::Numeric,
            Error::State(_) => ErrorClass::Internal,
            Error::Training { source, .. } | Error::Layer { source, .. } => source.class(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::Internal => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn in_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_task(self, task: usize, stage: impl Into<String>) -> Self {
        Error::Training {
            task,
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
