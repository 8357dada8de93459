//! Batch orchestration: article x language requests with bounded
//! concurrency, one writer, and resumable per-group outputs.
//!
//! Output directory layout:
//!
//! ```text
//! out/groups/<lang>/<article id>.jsonl   raw pairs per (article, lang), written atomically
//! out/corrections.jsonl                  optional manual fixes, read on every run
//! out/lb_<lang>.jsonl                    merged pairs with corrections applied
//! out/report.json                        run report
//! ```

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::align::{align_quadruplets, validate_fidelity, FidelityReport};
use super::client::{request_translation, ChatClient};
use super::{SentencePair, TargetLang, TranslateError};
use crate::corpus::Article;
use crate::retry::RetryPolicy;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub retry: RetryPolicy,
    pub concurrency: usize,
}

impl PipelineConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            retry: RetryPolicy::default(),
            concurrency: 4,
        }
    }
}

/// Manual fix for a regenerated source sentence. Without `lang` it applies
/// to every language run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub article_id: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<TargetLang>,
    pub lb: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFailure {
    pub article_id: String,
    pub lang: TargetLang,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangReport {
    pub lang: TargetLang,
    pub output: PathBuf,
    pub articles: usize,
    /// Pairs as returned by the model.
    pub pairs: usize,
    /// Pairs whose source side was replaced from `corrections.jsonl`.
    pub corrected: usize,
    /// Regenerated-source fidelity before corrections.
    pub fidelity: FidelityReport,
    /// Mismatches still present after corrections.
    pub remaining_mismatches: usize,
    /// Articles for which the model returned no sentences.
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRunReport {
    pub requests_issued: usize,
    pub groups_skipped: usize,
    pub failures: Vec<GroupFailure>,
    pub languages: Vec<LangReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadruplet_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadruplets: Option<usize>,
}

fn encode_component(id: &str) -> String {
    let mut s = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && !s.is_empty()) {
            s.push(b as char);
        } else {
            s.push_str(&format!("%{b:02X}"));
        }
    }
    s
}

pub fn group_path(out_dir: &Path, article_id: &str, lang: TargetLang) -> PathBuf {
    out_dir
        .join("groups")
        .join(lang.code())
        .join(format!("{}.jsonl", encode_component(article_id)))
}

pub fn merged_path(out_dir: &Path, lang: TargetLang) -> PathBuf {
    out_dir.join(format!("lb_{}.jsonl", lang.code()))
}

pub fn write_pairs(path: &Path, pairs: &[SentencePair]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for p in pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)
}

pub fn read_pairs(path: &Path) -> Result<Vec<SentencePair>, TranslateError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TranslateError::BadRecord {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read_corrections(path: &Path) -> Result<Vec<Correction>, TranslateError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TranslateError::BadRecord {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

type Job = (usize, TargetLang);

/// Requests every missing (article, language) group, then rebuilds the
/// merged per-language files from all groups on disk. Failed groups are
/// logged and reported; they never abort the batch.
pub fn translate_corpus(
    articles: &[Article],
    langs: &[TargetLang],
    client: &dyn ChatClient,
    cfg: &PipelineConfig,
) -> Result<CorpusRunReport, TranslateError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut pending: VecDeque<Job> = VecDeque::new();
    let mut skipped = 0;
    for (a, article) in articles.iter().enumerate() {
        for &lang in langs {
            if group_path(&cfg.out_dir, &article.id, lang).exists() {
                skipped += 1;
            } else {
                pending.push_back((a, lang));
            }
        }
    }
    let issued = pending.len();
    let queue = Mutex::new(pending);
    let mut failures = Vec::new();

    thread::scope(|scope| -> Result<(), TranslateError> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..cfg.concurrency.max(1).min(issued.max(1)) {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let Some((a, lang)) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                let result = request_translation(&articles[a], lang, client, &cfg.retry);
                if tx.send((a, lang, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // single writer
        for (a, lang, result) in rx {
            let article = &articles[a];
            match result {
                Ok(t) => write_pairs(&group_path(&cfg.out_dir, &article.id, lang), &t.pairs)?,
                Err(e) => {
                    log::warn!("translation of {} into {lang} failed: {e}", article.id);
                    failures.push(GroupFailure {
                        article_id: article.id.clone(),
                        lang,
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(())
    })?;
    failures.sort_by(|x, y| (&x.article_id, x.lang).cmp(&(&y.article_id, y.lang)));

    let corrections = read_corrections(&cfg.out_dir.join("corrections.jsonl"))?;
    let mut per_lang_runs: HashMap<TargetLang, Vec<SentencePair>> = HashMap::new();
    let mut languages = Vec::new();
    for &lang in langs {
        let fixes: HashMap<(&str, usize), &str> = corrections
            .iter()
            .filter(|c| c.lang.is_none() || c.lang == Some(lang))
            .map(|c| ((c.article_id.as_str(), c.index), c.lb.as_str()))
            .collect();
        let mut merged = Vec::new();
        let mut fidelity = Vec::new();
        let mut after = Vec::new();
        let (mut n_articles, mut corrected, mut flagged) = (0, 0, Vec::new());
        for article in articles {
            let path = group_path(&cfg.out_dir, &article.id, lang);
            if !path.exists() {
                continue;
            }
            n_articles += 1;
            let mut pairs = read_pairs(&path)?;
            if pairs.is_empty() {
                log::warn!("{} returned no sentences for {lang}; flagged", article.id);
                flagged.push(article.id.clone());
            }
            fidelity.push(validate_fidelity(&pairs, article));
            for p in &mut pairs {
                if let Some(fix) = fixes.get(&(p.article_id.as_str(), p.index)) {
                    p.source_text = fix.to_string();
                    corrected += 1;
                }
            }
            after.push(validate_fidelity(&pairs, article));
            merged.extend(pairs);
        }
        let output = merged_path(&cfg.out_dir, lang);
        write_pairs(&output, &merged)?;
        let fidelity = FidelityReport::merge(fidelity);
        languages.push(LangReport {
            lang,
            output,
            articles: n_articles,
            pairs: merged.len(),
            corrected,
            remaining_mismatches: FidelityReport::merge(after).mismatched.len(),
            fidelity,
            flagged,
        });
        per_lang_runs.insert(lang, merged);
    }

    let (quadruplets, quadruplet_rate) = match (
        per_lang_runs.get(&TargetLang::De),
        per_lang_runs.get(&TargetLang::Fr),
        per_lang_runs.get(&TargetLang::En),
    ) {
        (Some(de), Some(fr), Some(en)) => {
            let (q, rate) = align_quadruplets(de, fr, en);
            (Some(q.len()), Some(rate))
        }
        _ => (None, None),
    };

    let report = CorpusRunReport {
        requests_issued: issued,
        groups_skipped: skipped,
        failures,
        languages,
        quadruplet_rate,
        quadruplets,
    };
    let f = File::create(cfg.out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translate::client::ClientError;
    use crate::translate::response::serialize_translation;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Echoes each sentence (split on ". ") back with a tagged translation.
    struct EchoClient {
        calls: AtomicUsize,
        fail_on: Option<&'static str>,
        empty_on: Option<&'static str>,
    }

    impl EchoClient {
        fn new() -> Self {
            Self {
                calls: AtomicUsize::new(0),
                fail_on: None,
                empty_on: None,
            }
        }
    }

    impl ChatClient for EchoClient {
        fn complete(&self, system: &str, user: &str) -> Result<String, ClientError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail_on.is_some_and(|f| user.contains(f)) {
                return Err(ClientError::Status(503));
            }
            let lang = TargetLang::ALL
                .into_iter()
                .find(|l| system.contains(&format!("\"{}_sent1\"", l.code())))
                .unwrap();
            if self.empty_on.is_some_and(|f| user.contains(f)) {
                return Ok(r#"{"translation":[]}"#.into());
            }
            let pairs: Vec<SentencePair> = user
                .split_inclusive(". ")
                .map(str::trim)
                .enumerate()
                .map(|(index, s)| SentencePair {
                    article_id: String::new(),
                    index,
                    source_text: s.to_string(),
                    target_text: format!("[{lang}] {s}"),
                    target_lang: lang,
                })
                .collect();
            Ok(serialize_translation(&pairs, lang))
        }
    }

    fn articles() -> Vec<Article> {
        (0..2)
            .map(|i| Article {
                id: format!("art/{i}"),
                newspaper: "Obermosel-Zeitung".into(),
                year: 1924,
                language: "lb".into(),
                sentences: vec![format!("Éischte Saz {i}."), format!("Zweete Saz {i}.")],
                topic_vector: None,
            })
            .collect()
    }

    fn cfg(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            out_dir: dir.to_path_buf(),
            retry: RetryPolicy::immediate(1),
            concurrency: 3,
        }
    }

    #[test]
    fn all_groups_then_resume_after_deletion() {
        let dir = tempfile::tempdir().unwrap();
        let client = EchoClient::new();
        let arts = articles();
        let report = translate_corpus(&arts, &TargetLang::ALL, &client, &cfg(dir.path())).unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 6);
        assert_eq!(report.requests_issued, 6);
        assert!(report.failures.is_empty());
        assert_eq!(report.quadruplet_rate, Some(1.0));
        for l in &report.languages {
            assert_eq!((l.articles, l.pairs, l.fidelity.mismatch_rate), (2, 4, 0.0));
        }
        let merged = read_pairs(&merged_path(dir.path(), TargetLang::Fr)).unwrap();
        assert_eq!(merged[2].article_id, "art/1");

        fs::remove_file(group_path(dir.path(), "art/1", TargetLang::En)).unwrap();
        let client = EchoClient::new();
        let report = translate_corpus(&arts, &TargetLang::ALL, &client, &cfg(dir.path())).unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 1);
        assert_eq!((report.requests_issued, report.groups_skipped), (1, 5));
    }

    #[test]
    fn failing_article_does_not_abort_batch() {
        let dir = tempfile::tempdir().unwrap();
        let client = EchoClient {
            fail_on: Some("Saz 0"),
            ..EchoClient::new()
        };
        let report =
            translate_corpus(&articles(), &[TargetLang::De], &client, &cfg(dir.path())).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].article_id, "art/0");
        // retries = 1: the failing group costs two calls
        assert_eq!(client.calls.load(Ordering::SeqCst), 3);
        assert!(group_path(dir.path(), "art/1", TargetLang::De).exists());
        assert!(!group_path(dir.path(), "art/0", TargetLang::De).exists());
        assert_eq!(report.languages[0].pairs, 2);
    }

    #[test]
    fn empty_translations_are_flagged_and_corrections_applied() {
        let dir = tempfile::tempdir().unwrap();
        let client = EchoClient {
            empty_on: Some("Saz 1"),
            ..EchoClient::new()
        };
        fs::write(
            dir.path().join("corrections.jsonl"),
            r#"{"article_id":"art/0","index":1,"lb":"Zweete Saz 0 (korrigéiert)."}"#,
        )
        .unwrap();
        let report =
            translate_corpus(&articles(), &[TargetLang::En], &client, &cfg(dir.path())).unwrap();
        let l = &report.languages[0];
        assert_eq!(l.flagged, vec!["art/1".to_string()]);
        assert_eq!((l.pairs, l.corrected), (2, 1));
        assert_eq!(l.fidelity.mismatch_rate, 0.0);
        assert_eq!(l.remaining_mismatches, 1);
        let merged = read_pairs(&merged_path(dir.path(), TargetLang::En)).unwrap();
        assert_eq!(merged[1].source_text, "Zweete Saz 0 (korrigéiert).");
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn group_paths_are_filesystem_safe() {
        let p = group_path(Path::new("/o"), "../x y", TargetLang::De);
        assert_eq!(p, Path::new("/o/groups/de/%2E.%2Fx%20y.jsonl"));
    }
}
