//! Article ingestion, topic-vector clustering and article selection.
//!
//! Articles arrive as JSON lines. Those carrying a topic vector are grouped
//! with Lloyd's k-means; selection then keeps clusters strictly larger than
//! `min_cluster_size`, takes the article closest to each centroid plus a few
//! random extras, and truncates long articles to `max_sentences`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Execution;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate article id {id:?} on line {first} and line {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("k-means on empty input")]
    EmptyInput,
    #[error("k = {k} is invalid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Article {
    pub id: String,
    pub newspaper: String,
    pub year: i32,
    pub language: String,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_vector: Option<Vec<f64>>,
}

impl Article {
    /// Text presented to the translator: sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.sentences.is_empty() {
            return Err("article has no sentences".into());
        }
        if let Some(i) = self.sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(format!("sentence {i} is empty"));
        }
        if let Some(tv) = &self.topic_vector {
            if let Some(v) = tv.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(format!("topic vector entry {v} is negative or non-finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub article_id: String,
    pub cluster_id: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    pub min_cluster_size: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub extra_samples_per_cluster: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: 2000,
            min_cluster_size: 20,
            min_sentences: 5,
            max_sentences: 20,
            extra_samples_per_cluster: 3,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return Err(format!(
                "need 1 <= min_sentences ({}) <= max_sentences ({})",
                self.min_sentences, self.max_sentences
            ));
        }
        Ok(())
    }
}

pub fn load_articles(path: impl AsRef<Path>) -> Result<Vec<Article>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_articles(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parses article JSON lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_articles(reader: impl BufRead) -> Result<Vec<Article>, CorpusError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut topic_dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let article: Article =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
        article.check().map_err(|message| CorpusError::Malformed {
            line: lineno,
            message,
        })?;
        if let Some(tv) = &article.topic_vector {
            match topic_dim {
                None => topic_dim = Some(tv.len()),
                Some(d) if d != tv.len() => {
                    return Err(CorpusError::Malformed {
                        line: lineno,
                        message: format!("topic vector has length {}, expected {d}", tv.len()),
                    })
                }
                _ => {}
            }
        }
        if let Some(&first) = seen.get(&article.id) {
            return Err(CorpusError::DuplicateId {
                id: article.id,
                first,
                second: lineno,
            });
        }
        seen.insert(article.id.clone(), lineno);
        out.push(article);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Per input point: (cluster index, squared distance to its centroid).
    pub assignments: Vec<(usize, f64)>,
    /// Within-cluster SSE after every assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn kmeans_cluster(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult, CorpusError> {
    kmeans_cluster_with(vectors, k, seed, max_iters, Execution::default())
}

/// Lloyd's algorithm with seeded uniform initialisation.
///
/// Assignment runs through `exec`; centroid sums are accumulated in point
/// order, so the result is identical for either strategy.
pub fn kmeans_cluster_with(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    exec: Execution,
) -> Result<KMeansResult, CorpusError> {
    let n = vectors.len();
    if n == 0 {
        return Err(CorpusError::EmptyInput);
    }
    if k == 0 || k > n {
        return Err(CorpusError::InvalidK { k, n });
    }
    let dim = vectors[0].len();
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(CorpusError::DimensionMismatch {
            index,
            expected: dim,
            found: v.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init: Vec<usize> = sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| vectors[i].clone()).collect();

    let mut assignments = exec.map(vectors, |p| nearest(p, &centroids));
    let mut sse_history = vec![assignments.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in vectors.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s * inv).collect();
            } else {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = assignments
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .fold(None::<(usize, f64)>, |best, (i, &(_, d))| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    });
                if let Some((i, _)) = far {
                    taken[i] = true;
                    centroids[c] = vectors[i].clone();
                }
            }
        }

        let next = exec.map(vectors, |p| nearest(p, &centroids));
        let changed = next.iter().zip(&assignments).any(|(a, b)| a.0 != b.0);
        assignments = next;
        sse_history.push(assignments.iter().map(|a| a.1).sum());
        if !changed {
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        sse_history,
        iterations,
    })
}

/// Clusters every article that carries a topic vector; others are skipped.
pub fn cluster_articles(
    articles: &[Article],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Vec<Vec<f64>>, Vec<ClusterAssignment>), CorpusError> {
    let with_topics: Vec<&Article> = articles
        .iter()
        .filter(|a| a.topic_vector.is_some())
        .collect();
    let vectors: Vec<Vec<f64>> = with_topics
        .iter()
        .map(|a| a.topic_vector.clone().unwrap_or_default())
        .collect();
    let result = kmeans_cluster(&vectors, k, seed, max_iters)?;
    let assignments = with_topics
        .iter()
        .zip(&result.assignments)
        .map(|(a, &(cluster_id, distance))| ClusterAssignment {
            article_id: a.id.clone(),
            cluster_id,
            distance,
        })
        .collect();
    Ok((result.centroids, assignments))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub clusters_total: usize,
    pub clusters_kept: usize,
    pub representatives: usize,
    pub extra_samples: usize,
    pub truncated: usize,
}

pub fn select_articles(
    articles: &[Article],
    assignments: &[ClusterAssignment],
    cfg: &SelectionConfig,
) -> Vec<Article> {
    select_articles_with_summary(articles, assignments, cfg).0
}

pub fn select_articles_with_summary(
    articles: &[Article],
    assignments: &[ClusterAssignment],
    cfg: &SelectionConfig,
) -> (Vec<Article>, SelectionSummary) {
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut clusters: BTreeMap<usize, Vec<&ClusterAssignment>> = BTreeMap::new();
    for a in assignments {
        clusters.entry(a.cluster_id).or_default().push(a);
    }

    let mut summary = SelectionSummary {
        clusters_total: clusters.len(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();

    for members in clusters.values() {
        if members.len() <= cfg.min_cluster_size {
            continue;
        }
        summary.clusters_kept += 1;

        let mut eligible: Vec<(&ClusterAssignment, &Article)> = members
            .iter()
            .filter_map(|m| by_id.get(m.article_id.as_str()).map(|a| (*m, *a)))
            .filter(|(_, a)| a.sentences.len() >= cfg.min_sentences)
            .collect();
        if eligible.is_empty() {
            continue;
        }
        eligible.sort_by(|x, y| x.1.id.cmp(&y.1.id));

        let rep = eligible
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                x.0.distance
                    .total_cmp(&y.0.distance)
                    .then_with(|| x.1.id.cmp(&y.1.id))
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        let representative = eligible.remove(rep).1;
        out.push(representative);
        summary.representatives += 1;

        let take = cfg.extra_samples_per_cluster.min(eligible.len());
        let mut picks: Vec<usize> = sample(&mut rng, eligible.len(), take).into_vec();
        picks.sort_unstable();
        for i in picks {
            out.push(eligible[i].1);
            summary.extra_samples += 1;
        }
    }

    let selected = out
        .into_iter()
        .map(|a| {
            let mut a = a.clone();
            if a.sentences.len() > cfg.max_sentences {
                a.sentences.truncate(cfg.max_sentences);
                summary.truncated += 1;
            }
            a
        })
        .collect();
    (selected, summary)
}
