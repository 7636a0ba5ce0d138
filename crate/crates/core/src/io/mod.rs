//! File formats: embedding containers, manifests, feasibility tables and the
//! synthetic dataset generator.

mod embeddings;
mod feasibility;
mod manifest;
mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::domain::DomainError;

pub use embeddings::{EmbeddingFile, HEADER_LEN, MAGIC, VERSION};
pub use feasibility::{feasibility_to_text, parse_feasibility, read_feasibility, FeasibilityMask};
pub use manifest::{Dataset, Manifest, ManifestSample, PairDecl, PairKind, Split};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{extra} trailing bytes after the last id")]
    TrailingBytes { extra: u64 },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id of row {row} is empty or not valid UTF-8")]
    InvalidId { row: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no embedding for image id {0:?}")]
    MissingId(String),
    #[error("feasibility score missing for pair ({0}, {1})")]
    MissingPair(String, String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
