//! Evaluation protocols: historical bitext mining with Levenshtein
//! near-duplicate filtering, paraphrase triplets, and zero-shot topic
//! classification.

mod bitext;
mod levenshtein;
mod modern;

use thiserror::Error;

pub use bitext::{
    bitext_accuracy, bitext_accuracy_with, build_bitext_task, build_bitext_task_with, BitextTask,
    EvalReport, ReportConfig, TaskOptions, DEFAULT_THRESHOLD, TIE_RULE,
};
pub use levenshtein::{alnum_chars, lev_similarity, lev_similarity_with, levenshtein_distance};
pub use modern::{
    triplet_accuracy, zero_shot_classify, LabeledText, Triplet, TripletReport, ZeroShotReport,
    DEFAULT_TEMPLATE, LABEL_PLACEHOLDER,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate gold mapping for {0:?}")]
    DuplicateGold(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing embedding for id {0:?}")]
    MissingEmbedding(String),
    #[error("embedding dimensions differ: source {src}, target {tgt}")]
    DimensionMismatch { src: usize, tgt: usize },
    #[error(transparent)]
    Provider(#[from] crate::embedstore::ProviderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
