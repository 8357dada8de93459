use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::TargetLang;

/// One regenerated source sentence and its translation.
///
/// JSON line layout: `{"article_id", "index", "lb", "tgt", "lang"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub article_id: String,
    pub index: usize,
    #[serde(rename = "lb")]
    pub source_text: String,
    #[serde(rename = "tgt")]
    pub target_text: String,
    #[serde(rename = "lang")]
    pub target_lang: TargetLang,
}

impl SentencePair {
    /// Sentence id shared by both sides of the pair.
    pub fn sentence_id(&self) -> String {
        sentence_id(&self.article_id, self.index)
    }
}

pub fn sentence_id(article_id: &str, index: usize) -> String {
    format!("{article_id}#{index}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response is not JSON: {0}")]
    NotJson(String),
    #[error("response has no \"translation\" key")]
    MissingTranslation,
    #[error("\"translation\" is not an array")]
    NotArray,
    #[error("item {index}: {reason}")]
    Item { index: usize, reason: String },
}

fn strip_code_fences(body: &str) -> &str {
    let t = body.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // drop an optional language tag on the opening fence
    let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn item_text(obj: &Map<String, Value>, key: &str, index: usize) -> Result<String, ParseError> {
    let item_err = |reason: String| ParseError::Item { index, reason };
    match obj.get(key) {
        None => Err(item_err(format!("missing key {key:?}"))),
        Some(Value::String(s)) if s.trim().is_empty() => {
            Err(item_err(format!("empty string for {key:?}")))
        }
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(item_err(format!("{key:?} is not a string"))),
    }
}

/// Parses `{"translation": [{"lb": ..., "<lang>": ...}, ...]}` into pairs
/// indexed by array position. Markdown code fences are tolerated.
pub fn parse_translation_response(
    body: &str,
    target_lang: TargetLang,
    article_id: &str,
) -> Result<Vec<SentencePair>, ParseError> {
    let value: Value = serde_json::from_str(strip_code_fences(body))
        .map_err(|e| ParseError::NotJson(e.to_string()))?;
    let items = value
        .get("translation")
        .ok_or(ParseError::MissingTranslation)?
        .as_array()
        .ok_or(ParseError::NotArray)?;
    let code = target_lang.code();
    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let obj = item.as_object().ok_or_else(|| ParseError::Item {
                index,
                reason: "not an object".into(),
            })?;
            if let Some(extra) = obj.keys().find(|k| *k != "lb" && *k != code) {
                return Err(ParseError::Item {
                    index,
                    reason: format!("unexpected key {extra:?}"),
                });
            }
            Ok(SentencePair {
                article_id: article_id.to_string(),
                index,
                source_text: item_text(obj, "lb", index)?,
                target_text: item_text(obj, code, index)?,
                target_lang,
            })
        })
        .collect()
}

/// Inverse of [`parse_translation_response`] for a single article's pairs.
pub fn serialize_translation(pairs: &[SentencePair], target_lang: TargetLang) -> String {
    let items: Vec<Value> = pairs
        .iter()
        .map(|p| {
            let mut m = Map::new();
            m.insert("lb".into(), Value::String(p.source_text.clone()));
            m.insert(target_lang.code().into(), Value::String(p.target_text.clone()));
            Value::Object(m)
        })
        .collect();
    serde_json::json!({ "translation": items }).to_string()
}
