//! Error types shared across the pipeline.

use thiserror::Error;

/// Coarse error category, used by callers to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed, inconsistent, or insufficient input data or configuration.
    Input,
    /// Numerical failure (singular system, non-finite values).
    Numeric,
    /// Filesystem or serialization failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("{context}: unknown {kind} id {id:?}")]
    DanglingReference {
        context: &'static str,
        kind: &'static str,
        id: String,
    },

    #[error("unknown author {0:?}")]
    UnknownAuthor(String),

    #[error("unknown document {0:?}")]
    UnknownDocument(String),

    #[error("career citations missing for {} author(s): {}", .0.len(), format_ids(.0))]
    MissingCareerCitations(Vec<String>),

    #[error("career citations not resolved; run career resolution before feature extraction")]
    UnresolvedCareerCitations,

    #[error("{path}:{line}: embedding dimension {found} does not match expected {expected}")]
    DimensionMismatch {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: zero-norm embedding vector for document {id:?}")]
    ZeroVector {
        path: String,
        line: usize,
        id: String,
    },

    #[error("vector length {left} does not match {right}")]
    VectorLengthMismatch { left: usize, right: usize },

    #[error("requested {requested} negative pairs but only {available} are eligible")]
    InsufficientPairs { requested: u64, available: u64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("feature layout mismatch: fit has {fit} coefficients, input row has {row}")]
    LayoutMismatch { fit: usize, row: usize },

    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),

    #[error("pair ({citing:?}, {cited:?}) is not eligible: {reason}")]
    IneligiblePair {
        citing: String,
        cited: String,
        reason: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Io { .. } | Error::Format { .. } => ErrorClass::Io,
            _ => ErrorClass::Input,
        }
    }
}

fn format_ids(ids: &[String]) -> String {
    const SHOW: usize = 8;
    let mut shown: Vec<&str> = ids.iter().take(SHOW).map(String::as_str).collect();
    if ids.len() > SHOW {
        shown.push("...");
    }
    shown.join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
