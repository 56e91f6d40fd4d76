use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SsdlError>;

/// Broad failure category, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Invariant,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Invariant => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Input => "input",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Invariant => "invariant",
        }
    }
}

#[derive(Debug, Error)]
pub enum SsdlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("zero degree for {what} {index}")]
    ZeroDegree { what: &'static str, index: usize },

    #[error("median pairwise distance is zero (duplicate points); use a fixed bandwidth")]
    DegenerateBandwidth,

    #[error("non-finite gradient at iteration {iteration}, column {column}")]
    NonFiniteGradient { iteration: usize, column: usize },

    #[error("propagation system is singular (smallest eigenvalue estimate {min_eigenvalue:e})")]
    SingularSystem { min_eigenvalue: f64 },

    #[error("zero denominator for atom {atom} in code update")]
    DegenerateAtom { atom: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl SsdlError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SsdlError::Io { .. }
            | SsdlError::Parse { .. }
            | SsdlError::InvalidInput(_)
            | SsdlError::DimensionMismatch { .. }
            | SsdlError::DegenerateBandwidth => ErrorKind::Input,
            SsdlError::ZeroDegree { .. }
            | SsdlError::NonFiniteGradient { .. }
            | SsdlError::SingularSystem { .. }
            | SsdlError::DegenerateAtom { .. }
            | SsdlError::Numerical(_) => ErrorKind::Numerical,
            SsdlError::Invariant(_) => ErrorKind::Invariant,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SsdlError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        SsdlError::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    pub fn mismatch(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        SsdlError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
