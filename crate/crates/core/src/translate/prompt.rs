use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TranslateError;

/// Modern target languages for historical Luxembourgish sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetLang {
    De,
    Fr,
    En,
}

impl TargetLang {
    pub const ALL: [TargetLang; 3] = [TargetLang::De, TargetLang::Fr, TargetLang::En];

    pub fn code(self) -> &'static str {
        match self {
            TargetLang::De => "de",
            TargetLang::Fr => "fr",
            TargetLang::En => "en",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetLang::De => "German",
            TargetLang::Fr => "French",
            TargetLang::En => "English",
        }
    }
}

impl fmt::Display for TargetLang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TargetLang {
    type Err = TranslateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "de" => Ok(TargetLang::De),
            "fr" => Ok(TargetLang::Fr),
            "en" => Ok(TargetLang::En),
            other => Err(TranslateError::UnsupportedLanguage(other.to_string())),
        }
    }
}

/// System prompt with `{lang_name}` and `{lang_code}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_text: String,
    pub response_schema_hint: String,
}

const SYSTEM_TEXT: &str = "You are a professional translator specializing in the translation of historical Luxembourgish newspaper articles into modern Standard {lang_name}.

Your task is to translate paragraphs from such newspapers, provided to you by the user. These paragraphs may contain old spellings, outdated expressions, and likely a lot of OCR errors, as they are extracted from 19th-century LB newspapers. Please translate each sentence individually into modern Standard {lang_name}. Prioritize retaining the original meaning, expressions, and any nuanced tone in each translation, even if the result sounds somewhat unconventional or even bad in {lang_name}. If an expression is ambiguous due to its historical nature or OCR errors, attempt to reconstruct the most probable meaning based on linguistic context. Ensure that all punctuation and whitespace is preserved exactly. Do not add any extra formatting such as backticks, markdown, or additional symbols.";

const SCHEMA_HINT: &str = "Please return the source sentences and your translations in the following format as JSON:
{\"translation\": [
{\"lb\": \"lb_sent1\", \"{lang_code}\": \"{lang_code}_sent1\"},
{\"lb\": \"lb_sent2\", \"{lang_code}\": \"{lang_code}_sent2\"},
{\"lb\": \"lb_sent3\", \"{lang_code}\": \"{lang_code}_sent3\"}, ...]}";

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_text: SYSTEM_TEXT.to_string(),
            response_schema_hint: SCHEMA_HINT.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, lang: TargetLang) -> String {
        let fill = |s: &str| {
            s.replace("{lang_name}", lang.name())
                .replace("{lang_code}", lang.code())
        };
        format!("{}\n\n{}", fill(&self.system_text), fill(&self.response_schema_hint))
    }
}

/// The segmentation-and-translation system prompt for `target_lang`.
pub fn build_prompt(target_lang: &str) -> Result<String, TranslateError> {
    let lang: TargetLang = target_lang.parse()?;
    Ok(PromptTemplate::default().render(lang))
}
