use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SentencePair, TargetLang};
use crate::corpus::Article;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub article_id: String,
    pub index: usize,
    pub regenerated: String,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FidelityReport {
    pub total: usize,
    pub mismatched: Vec<Mismatch>,
    pub mismatch_rate: f64,
}

impl FidelityReport {
    fn from_parts(total: usize, mut mismatched: Vec<Mismatch>) -> Self {
        mismatched.sort_by(|a, b| (&a.article_id, a.index).cmp(&(&b.article_id, b.index)));
        let mismatch_rate = if total == 0 {
            0.0
        } else {
            mismatched.len() as f64 / total as f64
        };
        Self {
            total,
            mismatched,
            mismatch_rate,
        }
    }

    pub fn merge(reports: impl IntoIterator<Item = FidelityReport>) -> Self {
        let (mut total, mut mismatched) = (0, Vec::new());
        for r in reports {
            total += r.total;
            mismatched.extend(r.mismatched);
        }
        Self::from_parts(total, mismatched)
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A regenerated source sentence matches when, after collapsing whitespace
/// runs, it is a contiguous substring of the article text.
pub fn validate_fidelity(pairs: &[SentencePair], article: &Article) -> FidelityReport {
    let original = collapse_whitespace(&article.text());
    let mismatched = pairs
        .iter()
        .filter(|p| {
            p.article_id != article.id || {
                let regen = collapse_whitespace(&p.source_text);
                regen.is_empty() || !original.contains(&regen)
            }
        })
        .map(|p| Mismatch {
            article_id: p.article_id.clone(),
            index: p.index,
            regenerated: p.source_text.clone(),
            original: original.clone(),
        })
        .collect();
    FidelityReport::from_parts(pairs.len(), mismatched)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub source_text: String,
    pub de: String,
    pub fr: String,
    pub en: String,
    pub article_id: String,
}

/// Groups pairs by (article id, exact source text). A group with exactly one
/// pair per language is a quadruplet; the rate is quadruplets over distinct
/// source sentences seen in any run.
pub fn align_quadruplets(
    pairs_de: &[SentencePair],
    pairs_fr: &[SentencePair],
    pairs_en: &[SentencePair],
) -> (Vec<Quadruplet>, f64) {
    let mut groups: BTreeMap<(&str, &str), [Vec<&str>; 3]> = BTreeMap::new();
    for (slot, pairs) in [pairs_de, pairs_fr, pairs_en].into_iter().enumerate() {
        for p in pairs {
            groups
                .entry((p.article_id.as_str(), p.source_text.as_str()))
                .or_default()[slot]
                .push(p.target_text.as_str());
        }
    }
    let distinct = groups.len();
    let quads: Vec<Quadruplet> = groups
        .into_iter()
        .filter(|(_, langs)| langs.iter().all(|v| v.len() == 1))
        .map(|((article_id, source), langs)| Quadruplet {
            source_text: source.to_string(),
            de: langs[0][0].to_string(),
            fr: langs[1][0].to_string(),
            en: langs[2][0].to_string(),
            article_id: article_id.to_string(),
        })
        .collect();
    let rate = if distinct == 0 {
        0.0
    } else {
        quads.len() as f64 / distinct as f64
    };
    (quads, rate)
}

/// Convenience for a single-language view of a pair list.
pub fn pairs_for(pairs: &[SentencePair], lang: TargetLang) -> Vec<SentencePair> {
    pairs
        .iter()
        .filter(|p| p.target_lang == lang)
        .cloned()
        .collect()
}
