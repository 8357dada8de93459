//! Monolingual protocols: paraphrase triplets and template-based zero-shot
//! topic classification. Both embed every distinct text once.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::embedstore::{cosine, EmbeddingProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

impl Triplet {
    pub fn validate(&self) -> Result<(), String> {
        if [&self.anchor, &self.positive, &self.negative]
            .iter()
            .any(|s| s.trim().is_empty())
        {
            return Err("empty text".into());
        }
        if self.positive == self.negative {
            return Err("positive equals negative".into());
        }
        Ok(())
    }
}

fn embed_unique<'a>(
    provider: &dyn EmbeddingProvider,
    texts: impl IntoIterator<Item = &'a str>,
    batch_size: usize,
) -> Result<HashMap<String, Vec<f32>>, EvalError> {
    let unique: Vec<String> = texts
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    let mut out = HashMap::with_capacity(unique.len());
    for chunk in unique.chunks(batch_size.max(1)) {
        let vecs = provider.embed_batch(chunk)?;
        out.extend(chunk.iter().cloned().zip(vecs));
    }
    Ok(out)
}

fn cos(vecs: &HashMap<String, Vec<f32>>, a: &str, b: &str) -> f64 {
    cosine(&vecs[a], &vecs[b]).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletReport {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    pub model: String,
    pub tie_rule: String,
}

/// Fraction of triplets with cos(anchor, positive) > cos(anchor, negative).
pub fn triplet_accuracy(
    triplets: &[Triplet],
    provider: &dyn EmbeddingProvider,
) -> Result<TripletReport, EvalError> {
    for (i, t) in triplets.iter().enumerate() {
        t.validate()
            .map_err(|m| EvalError::InvalidInput(format!("triplet {i}: {m}")))?;
    }
    let vecs = embed_unique(
        provider,
        triplets
            .iter()
            .flat_map(|t| [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()]),
        256,
    )?;
    let correct = triplets
        .iter()
        .filter(|t| cos(&vecs, &t.anchor, &t.positive) > cos(&vecs, &t.anchor, &t.negative))
        .count();
    Ok(TripletReport {
        accuracy: if triplets.is_empty() {
            0.0
        } else {
            correct as f64 / triplets.len() as f64
        },
        n: triplets.len(),
        correct,
        model: provider.model_name().to_string(),
        tie_rule: "strict: equal similarities count as failure".into(),
    })
}

pub const LABEL_PLACEHOLDER: &str = "{label}";
pub const DEFAULT_TEMPLATE: &str = "The topic of the news is {label}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub accuracy: f64,
    pub n: usize,
    pub labels: Vec<String>,
    pub template: String,
    pub model: String,
    pub predictions: Vec<String>,
}

/// Renders every label through `template`, embeds it once, and assigns
/// each text the label with the highest cosine (ties: lowest label index).
pub fn zero_shot_classify(
    texts: &[LabeledText],
    labels: &[String],
    template: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<ZeroShotReport, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::InvalidInput("no labels".into()));
    }
    if template.matches(LABEL_PLACEHOLDER).count() != 1 {
        return Err(EvalError::InvalidInput(format!(
            "template must contain exactly one {LABEL_PLACEHOLDER} placeholder: {template:?}"
        )));
    }
    let rendered: Vec<String> = labels
        .iter()
        .map(|l| template.replace(LABEL_PLACEHOLDER, l))
        .collect();
    let label_vecs = provider.embed_batch(&rendered)?;
    let text_vecs = embed_unique(provider, texts.iter().map(|t| t.text.as_str()), 256)?;

    let mut correct = 0;
    let predictions: Vec<String> = texts
        .iter()
        .map(|t| {
            let v = &text_vecs[&t.text];
            let mut best = (0, f64::NEG_INFINITY);
            for (i, lv) in label_vecs.iter().enumerate() {
                let s = cosine(v, lv).unwrap_or(0.0);
                if s > best.1 {
                    best = (i, s);
                }
            }
            let pred = labels[best.0].clone();
            if pred == t.label {
                correct += 1;
            }
            pred
        })
        .collect();
    Ok(ZeroShotReport {
        accuracy: if texts.is_empty() {
            0.0
        } else {
            correct as f64 / texts.len() as f64
        },
        n: texts.len(),
        labels: labels.to_vec(),
        template: template.to_string(),
        model: provider.model_name().to_string(),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::FileProvider;

    fn provider(entries: &[(&str, [f32; 2])]) -> FileProvider {
        FileProvider::from_map(
            "planted",
            entries.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect(),
        )
        .unwrap()
    }

    fn trip(a: &str, p: &str, n: &str) -> Triplet {
        Triplet {
            anchor: a.into(),
            positive: p.into(),
            negative: n.into(),
        }
    }

    #[test]
    fn positive_equal_to_anchor_is_correct() {
        let p = provider(&[("a", [1.0, 0.0]), ("n", [0.0, 1.0])]);
        let r = triplet_accuracy(&[trip("a", "a", "n")], &p).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn equal_similarity_is_a_failure() {
        let p = provider(&[("a", [1.0, 0.0]), ("p", [1.0, 1.0]), ("n", [1.0, -1.0])]);
        assert_eq!(triplet_accuracy(&[trip("a", "p", "n")], &p).unwrap().accuracy, 0.0);
    }

    #[test]
    fn three_of_four_planted() {
        let p = provider(&[
            ("a", [1.0, 0.0]),
            ("close", [0.9, 0.1]),
            ("far", [0.0, 1.0]),
            ("opposite", [-1.0, 0.0]),
        ]);
        let ts = [
            trip("a", "close", "far"),
            trip("a", "far", "opposite"),
            trip("a", "close", "opposite"),
            trip("a", "far", "close"),
        ];
        let r = triplet_accuracy(&ts, &p).unwrap();
        assert_eq!((r.correct, r.accuracy), (3, 0.75));
    }

    #[test]
    fn invalid_triplets_rejected() {
        let p = provider(&[("a", [1.0, 0.0])]);
        assert!(triplet_accuracy(&[trip("a", "x", "x")], &p).is_err());
        assert!(triplet_accuracy(&[trip("", "x", "y")], &p).is_err());
    }

    fn labeled(text: &str, label: &str) -> LabeledText {
        LabeledText {
            text: text.into(),
            label: label.into(),
        }
    }

    #[test]
    fn text_matching_template_gets_that_label() {
        let p = provider(&[
            ("Topic: sports", [1.0, 0.0]),
            ("Topic: politics", [0.0, 1.0]),
            ("Goal!", [0.9, 0.2]),
            ("Vote!", [0.1, 0.8]),
        ]);
        let labels = vec!["sports".to_string(), "politics".to_string()];
        let r = zero_shot_classify(
            &[labeled("Goal!", "sports"), labeled("Vote!", "sports")],
            &labels,
            "Topic: {label}",
            &p,
        )
        .unwrap();
        assert_eq!(r.predictions, ["sports", "politics"]);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn identical_templates_tie_to_first_label() {
        let p = provider(&[("T a", [1.0, 0.0]), ("T b", [1.0, 0.0]), ("x", [0.5, 0.5])]);
        let labels = vec!["b".to_string(), "a".to_string()];
        let labels_rev = vec!["a".to_string(), "b".to_string()];
        let r = zero_shot_classify(&[labeled("x", "a")], &labels, "T {label}", &p).unwrap();
        assert_eq!(r.predictions, ["b"]);
        let r = zero_shot_classify(&[labeled("x", "a")], &labels_rev, "T {label}", &p).unwrap();
        assert_eq!(r.predictions, ["a"]);
    }

    #[test]
    fn template_needs_exactly_one_placeholder() {
        let p = provider(&[("x", [1.0, 0.0])]);
        let labels = vec!["a".to_string()];
        assert!(zero_shot_classify(&[], &labels, "no placeholder", &p).is_err());
        assert!(zero_shot_classify(&[], &labels, "{label} {label}", &p).is_err());
        assert!(zero_shot_classify(&[], &[], DEFAULT_TEMPLATE, &p).is_err());
    }
}
