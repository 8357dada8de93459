//! LLM-driven segmentation and translation of historical articles, source
//! fidelity checks and four-way alignment.

mod align;
mod client;
pub mod pipeline;
mod prompt;
mod response;

use thiserror::Error;

pub use align::{align_quadruplets, pairs_for, validate_fidelity, FidelityReport, Mismatch, Quadruplet};
pub use client::{request_translation, AttemptError, ChatClient, ClientError, HttpChatClient, Translation};
pub use pipeline::{translate_corpus, Correction, CorpusRunReport, PipelineConfig};
pub use prompt::{build_prompt, PromptTemplate, TargetLang};
pub use response::{parse_translation_response, sentence_id, serialize_translation, ParseError, SentencePair};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("unsupported target language {0:?} (expected de, fr or en)")]
    UnsupportedLanguage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: AttemptError },
    #[error("{path}, line {line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
