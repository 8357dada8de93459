//! Sentence embedding storage: a contiguous f32 matrix, exact cosine kNN,
//! the `.hxem` file format and pluggable embedding providers.

mod knn;
mod matrix;
pub mod persist;
mod provider;

use thiserror::Error;

pub use knn::{knn, knn_filtered_with, knn_with, rank_order, Hit};
pub use matrix::{cosine, normalize_rows, EmbeddingMatrix};
pub use persist::{load, save};
pub use provider::{embed_texts, EmbeddingProvider, FileProvider, RemoteProvider, StubProvider};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("data length {found} does not match n x dim = {expected}")]
    Shape { expected: usize, found: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("missing embedding for id {0:?}")]
    MissingId(String),
    #[error("row {row} has L2 norm {norm}, expected 1 for a normalized matrix")]
    NotUnit { row: usize, norm: f64 },
    #[error("row {row} is a zero vector")]
    ZeroRow { row: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension drift at row {row}: expected {expected}, found {found}")]
    DimensionDrift {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("bad magic: not an HXEM file")]
    BadMagic,
    #[error("unsupported HXEM version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {section} ends early at byte {offset}")]
    Truncated { section: &'static str, offset: usize },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("invalid provider response: {0}")]
    Invalid(String),
    #[error("no vector for text {0:?}")]
    UnknownText(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}
