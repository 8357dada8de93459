//! Linear adapters over frozen base embeddings, trained with an in-batch
//! contrastive ranking loss or by distillation from a frozen teacher, under
//! the hist / modern / mixed data strategies.

mod loss;
mod model;
mod plan;
mod train;

use thiserror::Error;

pub use loss::{distill_loss, mnrl_loss, MnrlOutput};
pub use model::{AdapterMeta, AdapterModel, ApplyTo, Objective, Strategy};
pub use plan::{plan_batches, MixedBatchPlan, SourceTag};
pub use train::{distill_bidirectional, train, PairSet, TrainConfig, TrainHistory};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("contrastive batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("batch sizes differ: {a} vs {b}")]
    BatchMismatch { a: usize, b: usize },
    #[error("zero vector in batch")]
    ZeroVector,
    #[error("{0} dataset is empty but required by the strategy")]
    EmptyDataset(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
    #[error("bad magic (not an adapter file)")]
    BadMagic,
    #[error("unsupported adapter version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated adapter file in {section}")]
    Truncated { section: &'static str },
    #[error("corrupt adapter file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] crate::embedstore::StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
