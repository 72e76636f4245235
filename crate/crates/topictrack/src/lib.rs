//! Corpus files, model persistence and the `topictrack` command line on top of
//! [`topictrack_core`].

pub mod artifact;
pub mod commands;
pub mod config;
pub mod io;

use std::path::Path;

pub use topictrack_core as core;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid `{field}`: {reason}")]
    Schema {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Format(String),
    #[error("not a topictrack model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("model file checksum mismatch")]
    Checksum,
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] topictrack_core::Error),
}

impl Error {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Stable identifier of the error class, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Config { .. } => "config",
            Error::Format(_) => "format",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion { .. } => "version",
            Error::Truncated => "truncated",
            Error::Checksum => "checksum",
            Error::Usage(_) => "usage",
            Error::Core(_) => "invalid",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}
