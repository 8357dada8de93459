use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::levenshtein::{alnum_chars, similarity_exceeds};
use super::EvalError;
use crate::embedstore::EmbeddingMatrix;
use crate::translate::SentencePair;
use crate::Execution;

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const TIE_RULE: &str = "strict: a tie with any remaining candidate counts as a miss";

/// A bidirectional bitext-mining task with per-query candidate exclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitextTask {
    pub queries: Vec<String>,
    pub candidates: Vec<String>,
    /// query id -> gold candidate id
    pub gold: BTreeMap<String, String>,
    /// query id -> candidate ids removed for that query
    pub excluded: BTreeMap<String, BTreeSet<String>>,
    /// candidate id -> query ids removed when the candidate is the query
    pub excluded_reverse: BTreeMap<String, BTreeSet<String>>,
    pub threshold: f64,
    #[serde(default)]
    pub casefold: bool,
    pub n_excluded_pairs: usize,
}

impl BitextTask {
    /// Builds a task from explicit parts and checks its invariants. The
    /// reverse exclusions are the transpose of `excluded`.
    pub fn new(
        queries: Vec<String>,
        candidates: Vec<String>,
        gold: BTreeMap<String, String>,
        excluded: BTreeMap<String, BTreeSet<String>>,
        threshold: f64,
    ) -> Result<Self, EvalError> {
        let mut excluded_reverse: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (q, cs) in &excluded {
            for c in cs {
                excluded_reverse.entry(c.clone()).or_default().insert(q.clone());
            }
        }
        let n_excluded_pairs = excluded.values().map(BTreeSet::len).sum();
        let task = Self {
            queries,
            candidates,
            gold,
            excluded,
            excluded_reverse,
            threshold,
            casefold: false,
            n_excluded_pairs,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidTask(m));
        if self.queries.len() != self.candidates.len() {
            return bad(format!(
                "{} queries but {} candidates",
                self.queries.len(),
                self.candidates.len()
            ));
        }
        let qs: BTreeSet<&String> = self.queries.iter().collect();
        let cs: BTreeSet<&String> = self.candidates.iter().collect();
        if qs.len() != self.queries.len() || cs.len() != self.candidates.len() {
            return bad("duplicate ids in queries or candidates".into());
        }
        if self.gold.len() != self.queries.len() {
            return bad(format!("gold covers {} of {} queries", self.gold.len(), self.queries.len()));
        }
        let mut targets = BTreeSet::new();
        for (q, c) in &self.gold {
            if !qs.contains(q) || !cs.contains(c) {
                return bad(format!("gold pair ({q}, {c}) references unknown ids"));
            }
            if !targets.insert(c) {
                return Err(EvalError::DuplicateGold(c.clone()));
            }
            if self.excluded.get(q).is_some_and(|e| e.contains(c))
                || self.excluded_reverse.get(c).is_some_and(|e| e.contains(q))
            {
                return bad(format!("gold pair ({q}, {c}) is excluded"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let task: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskOptions {
    pub threshold: f64,
    pub casefold: bool,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            casefold: false,
        }
    }
}

pub fn build_bitext_task(pairs: &[SentencePair], threshold: f64) -> Result<BitextTask, EvalError> {
    build_bitext_task_with(
        pairs,
        TaskOptions {
            threshold,
            ..TaskOptions::default()
        },
        Execution::default(),
    )
}

/// Source sentences become queries, their translations the candidates, both
/// under the pair's sentence id. For each query, every non-gold candidate
/// whose stripped Levenshtein similarity to the query exceeds the threshold
/// is excluded (and the transposed pair in the reverse direction).
pub fn build_bitext_task_with(
    pairs: &[SentencePair],
    opts: TaskOptions,
    exec: Execution,
) -> Result<BitextTask, EvalError> {
    let mut seen = HashMap::new();
    for p in pairs {
        let id = p.sentence_id();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(EvalError::DuplicateGold(id));
        }
    }
    let ids: Vec<String> = pairs.iter().map(SentencePair::sentence_id).collect();
    let src: Vec<Vec<char>> = pairs
        .iter()
        .map(|p| alnum_chars(&p.source_text, opts.casefold))
        .collect();
    let tgt: Vec<Vec<char>> = pairs
        .iter()
        .map(|p| alnum_chars(&p.target_text, opts.casefold))
        .collect();

    let hits: Vec<Vec<usize>> = exec.map_range(pairs.len(), |i| {
        (0..pairs.len())
            .filter(|&j| j != i && similarity_exceeds(&src[i], &tgt[j], opts.threshold))
            .collect()
    });
    let mut excluded: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, js) in hits.into_iter().enumerate() {
        if !js.is_empty() {
            excluded.insert(ids[i].clone(), js.into_iter().map(|j| ids[j].clone()).collect());
        }
    }
    let gold = ids.iter().map(|id| (id.clone(), id.clone())).collect();
    let mut task = BitextTask::new(ids.clone(), ids, gold, excluded, opts.threshold)?;
    task.casefold = opts.casefold;
    Ok(task)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub threshold: f64,
    pub casefold: bool,
    pub tie_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_src_to_tgt: f64,
    pub acc_tgt_to_src: f64,
    pub acc_avg: f64,
    pub n_queries: usize,
    pub n_excluded_pairs: usize,
    pub config: ReportConfig,
}

struct Side {
    rows: Vec<Vec<f32>>,
    norms: Vec<f64>,
}

impl Side {
    fn gather(ids: &[String], m: &EmbeddingMatrix) -> Result<Self, EvalError> {
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            rows.push(
                m.get(id)
                    .ok_or_else(|| EvalError::MissingEmbedding(id.clone()))?
                    .to_vec(),
            );
        }
        let norms = rows
            .iter()
            .map(|r| r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
            .collect();
        Ok(Self { rows, norms })
    }

    fn cos(&self, i: usize, other: &Side, j: usize) -> f64 {
        let d: f64 = self.rows[i]
            .iter()
            .zip(&other.rows[j])
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        let n = self.norms[i] * other.norms[j];
        if n == 0.0 {
            0.0
        } else {
            d / n
        }
    }
}

/// Fraction of queries whose gold candidate strictly outscores every other
/// non-excluded candidate.
fn directional_accuracy(
    from: &Side,
    to: &Side,
    gold: &[usize],
    excluded: &[Vec<bool>],
    exec: Execution,
) -> f64 {
    let n = gold.len();
    if n == 0 {
        return 0.0;
    }
    let hits = exec.map_range(n, |i| {
        let g = from.cos(i, to, gold[i]);
        (0..to.rows.len())
            .filter(|&j| j != gold[i] && !excluded[i][j])
            .all(|j| from.cos(i, to, j) < g)
    });
    hits.into_iter().filter(|&h| h).count() as f64 / n as f64
}

pub fn bitext_accuracy(
    task: &BitextTask,
    emb_src: &EmbeddingMatrix,
    emb_tgt: &EmbeddingMatrix,
) -> Result<EvalReport, EvalError> {
    bitext_accuracy_with(task, emb_src, emb_tgt, Execution::default())
}

pub fn bitext_accuracy_with(
    task: &BitextTask,
    emb_src: &EmbeddingMatrix,
    emb_tgt: &EmbeddingMatrix,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    task.validate()?;
    if emb_src.dim() != emb_tgt.dim() {
        return Err(EvalError::DimensionMismatch {
            src: emb_src.dim(),
            tgt: emb_tgt.dim(),
        });
    }
    let src = Side::gather(&task.queries, emb_src)?;
    let tgt = Side::gather(&task.candidates, emb_tgt)?;

    let q_pos: HashMap<&str, usize> = task.queries.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
    let c_pos: HashMap<&str, usize> = task.candidates.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let n = task.queries.len();

    let mut fwd_gold = vec![0; n];
    let mut rev_gold = vec![0; n];
    for (q, c) in &task.gold {
        let (qi, ci) = (q_pos[q.as_str()], c_pos[c.as_str()]);
        fwd_gold[qi] = ci;
        rev_gold[ci] = qi;
    }
    let mut fwd_ex = vec![vec![false; n]; n];
    for (q, cs) in &task.excluded {
        if let Some(&qi) = q_pos.get(q.as_str()) {
            for c in cs {
                if let Some(&ci) = c_pos.get(c.as_str()) {
                    fwd_ex[qi][ci] = true;
                }
            }
        }
    }
    let mut rev_ex = vec![vec![false; n]; n];
    for (c, qs) in &task.excluded_reverse {
        if let Some(&ci) = c_pos.get(c.as_str()) {
            for q in qs {
                if let Some(&qi) = q_pos.get(q.as_str()) {
                    rev_ex[ci][qi] = true;
                }
            }
        }
    }

    let acc_src_to_tgt = directional_accuracy(&src, &tgt, &fwd_gold, &fwd_ex, exec);
    let acc_tgt_to_src = directional_accuracy(&tgt, &src, &rev_gold, &rev_ex, exec);
    Ok(EvalReport {
        acc_src_to_tgt,
        acc_tgt_to_src,
        acc_avg: (acc_src_to_tgt + acc_tgt_to_src) / 2.0,
        n_queries: n,
        n_excluded_pairs: task.n_excluded_pairs,
        config: ReportConfig {
            threshold: task.threshold,
            casefold: task.casefold,
            tie_rule: TIE_RULE.to_string(),
        },
    })
}
