//! Crate-wide error type.
//!
//! Per-voxel numerical failures (near-singular systems, degenerate signals)
//! are deliberately *not* errors: they are recorded on the voxel's posterior
//! record so a volume fit never aborts halfway through. The variants here
//! cover contract violations, malformed inputs, and I/O failures — the
//! things a caller (or the CLI, which maps them to exit code 2) must handle.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Structurally broken file (bad magic, truncated header, inconsistent
    /// bitpix, ...). `reason` is human-readable and specific.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(
        "{}: unsupported NIfTI datatype code {code} (supported: 2=u8, 4=i16, 16=f32, 64=f64)",
        path.display()
    )]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    /// Non-numeric token in a text table (bval/bvec).
    #[error("{} line {line}: expected a number, got {token:?}", path.display())]
    ParseNumber {
        path: PathBuf,
        line: usize,
        token: String,
    },

    /// Mutually inconsistent inputs (mismatched counts, fingerprints, dims).
    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    /// An argument violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The design matrix cannot be fit at all (same for every voxel).
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    /// A single voxel's signal cannot be log-transformed (all non-positive).
    #[error("degenerate voxel: {0}")]
    DegenerateVoxel(String),

    /// Dataset invariant violations collected by `validate_dataset`.
    #[error("dataset validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{}: bad manifest: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
