//! On-disk search index: a directory holding `manifest.json`, one `.hxem`
//! matrix and one payload JSONL file per language side, and the adapter
//! (if any) that was pre-applied to the adapted sides.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use histkit_core::adapt::{AdaptError, AdapterModel, ApplyTo, Objective, Strategy};
use histkit_core::embedstore::{self, knn_filtered_with, EmbeddingMatrix, StoreError};
use histkit_core::Execution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST: &str = "manifest.json";
pub const ADAPTER_FILE: &str = "adapter.hxad";
pub const FORMAT_VERSION: u32 = 1;
const MAX_OFFENDERS: usize = 10;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("side {lang:?}: ids without embedding {missing_embedding:?}, ids without payload {missing_payload:?}")]
    IdMismatch {
        lang: String,
        missing_embedding: Vec<String>,
        missing_payload: Vec<String>,
    },
    #[error("bad payload {path}:{line}: {message}")]
    Payload {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dimension mismatch: index {index}, {what} {found}")]
    Dimension {
        index: usize,
        what: &'static str,
        found: usize,
    },
    #[error("invalid index input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Store { path: PathBuf, source: StoreError },
    #[error("{path}: {source}")]
    Adapter { path: PathBuf, source: AdaptError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub id: String,
    pub text: String,
    pub article_id: String,
    pub newspaper: String,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSummary {
    pub objective: Objective,
    pub strategy: Strategy,
    pub apply_to: ApplyTo,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideManifest {
    pub lang: String,
    pub count: usize,
    pub embeddings: String,
    pub payloads: String,
    pub adapted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub model: String,
    pub dim: usize,
    pub source_lang: String,
    pub adapter: Option<AdapterSummary>,
    pub sides: Vec<SideManifest>,
}

impl Manifest {
    /// (source language, other side) for every non-source side.
    pub fn language_pairs(&self) -> Vec<(String, String)> {
        self.sides
            .iter()
            .filter(|s| s.lang != self.source_lang)
            .map(|s| (self.source_lang.clone(), s.lang.clone()))
            .collect()
    }

    pub fn sentence_count(&self) -> usize {
        self.sides.iter().map(|s| s.count).sum()
    }

    fn check(&self, path: &Path) -> Result<(), IndexError> {
        let bad = |message: String| IndexError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        if self.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", self.format_version)));
        }
        if self.dim == 0 {
            return Err(bad("dim is zero".into()));
        }
        let mut langs = BTreeSet::new();
        for s in &self.sides {
            if !langs.insert(&s.lang) {
                return Err(bad(format!("duplicate side {:?}", s.lang)));
            }
            for f in [&s.embeddings, &s.payloads] {
                if f.contains('/') || f.contains('\\') || f.starts_with('.') {
                    return Err(bad(format!("file name {f:?} must be a plain name")));
                }
            }
        }
        if self.sides.iter().any(|s| s.adapted) != self.adapter.is_some() {
            return Err(bad("adapted sides and adapter entry disagree".into()));
        }
        Ok(())
    }
}

/// Parses and checks the manifest alone; cheap enough to run before binding
/// a port.
pub fn read_manifest(dir: &Path) -> Result<Manifest, IndexError> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| IndexError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    manifest.check(&path)?;
    Ok(manifest)
}

/// One language side handed to [`build_index`].
#[derive(Debug, Clone)]
pub struct SideInput {
    pub lang: String,
    pub payloads: Vec<Payload>,
    pub embeddings: EmbeddingMatrix,
}

#[derive(Debug, Clone)]
pub struct IndexSpec {
    pub name: String,
    pub model: String,
    /// Language whose side the adapter maps when it applies to the source
    /// only.
    pub source_lang: String,
}

fn side_file(lang: &str, ext: &str) -> String {
    let safe: String = lang
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.{ext}")
}

fn check_ids(lang: &str, payloads: &[Payload], m: &EmbeddingMatrix) -> Result<(), IndexError> {
    let payload_ids: BTreeSet<&str> = payloads.iter().map(|p| p.id.as_str()).collect();
    if payload_ids.len() != payloads.len() {
        return Err(IndexError::Invalid(format!("side {lang:?}: duplicate payload ids")));
    }
    let emb_ids: BTreeSet<&str> = m.ids().iter().map(String::as_str).collect();
    let missing_embedding: Vec<String> = payload_ids
        .difference(&emb_ids)
        .take(MAX_OFFENDERS)
        .map(|s| s.to_string())
        .collect();
    let missing_payload: Vec<String> = emb_ids
        .difference(&payload_ids)
        .take(MAX_OFFENDERS)
        .map(|s| s.to_string())
        .collect();
    if missing_embedding.is_empty() && missing_payload.is_empty() {
        Ok(())
    } else {
        Err(IndexError::IdMismatch {
            lang: lang.to_string(),
            missing_embedding,
            missing_payload,
        })
    }
}

/// Writes a complete index into `out`, replacing any previous index there.
/// Everything is written to a sibling temp directory first and moved into
/// place with renames.
pub fn build_index(
    spec: &IndexSpec,
    sides: &[SideInput],
    adapter: Option<&AdapterModel>,
    out: &Path,
) -> Result<Manifest, IndexError> {
    if sides.is_empty() {
        return Err(IndexError::Invalid("no sides".into()));
    }
    let dim = sides[0].embeddings.dim();
    let mut langs = BTreeSet::new();
    for s in sides {
        if !langs.insert(&s.lang) {
            return Err(IndexError::Invalid(format!("duplicate side {:?}", s.lang)));
        }
        if s.embeddings.dim() != dim {
            return Err(IndexError::Dimension {
                index: dim,
                what: "side",
                found: s.embeddings.dim(),
            });
        }
        check_ids(&s.lang, &s.payloads, &s.embeddings)?;
    }
    if let Some(a) = adapter {
        if a.dim() != dim {
            return Err(IndexError::Dimension {
                index: dim,
                what: "adapter",
                found: a.dim(),
            });
        }
    }

    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let base = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into());
    let tmp = parent.join(format!(".{base}.tmp-{}-{stamp}", std::process::id()));
    fs::create_dir(&tmp).map_err(io_err(&tmp))?;

    let result = write_index(spec, sides, adapter, dim, &tmp);
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };

    let old = parent.join(format!(".{base}.old-{}-{stamp}", std::process::id()));
    let had_old = out.exists();
    if had_old {
        fs::rename(out, &old).map_err(io_err(out))?;
    }
    if let Err(e) = fs::rename(&tmp, out) {
        if had_old {
            let _ = fs::rename(&old, out);
        }
        return Err(io_err(out)(e));
    }
    if had_old {
        let _ = fs::remove_dir_all(&old);
    }
    Ok(manifest)
}

fn write_index(
    spec: &IndexSpec,
    sides: &[SideInput],
    adapter: Option<&AdapterModel>,
    dim: usize,
    dir: &Path,
) -> Result<Manifest, IndexError> {
    let mut side_manifests = Vec::new();
    for s in sides {
        let adapted = match adapter {
            Some(a) => a.meta.apply_to == ApplyTo::Both || s.lang == spec.source_lang,
            None => false,
        };
        let matrix = match adapter.filter(|_| adapted) {
            Some(a) => a.apply_matrix(&s.embeddings).map_err(|source| IndexError::Adapter {
                path: dir.to_path_buf(),
                source,
            })?,
            None => s.embeddings.clone(),
        };
        let emb_name = side_file(&s.lang, "hxem");
        let emb_path = dir.join(&emb_name);
        embedstore::save(&matrix, &emb_path).map_err(|source| IndexError::Store {
            path: emb_path.clone(),
            source,
        })?;

        let by_id: HashMap<&str, &Payload> = s.payloads.iter().map(|p| (p.id.as_str(), p)).collect();
        let pay_name = side_file(&s.lang, "payloads.jsonl");
        let pay_path = dir.join(&pay_name);
        let mut w = BufWriter::new(File::create(&pay_path).map_err(io_err(&pay_path))?);
        for id in matrix.ids() {
            let line = serde_json::to_string(by_id[id.as_str()]).expect("payload serializes");
            writeln!(w, "{line}").map_err(io_err(&pay_path))?;
        }
        w.flush().map_err(io_err(&pay_path))?;

        side_manifests.push(SideManifest {
            lang: s.lang.clone(),
            count: matrix.len(),
            embeddings: emb_name,
            payloads: pay_name,
            adapted,
        });
    }
    let any_adapted = side_manifests.iter().any(|s| s.adapted);
    let adapter = adapter.filter(|_| any_adapted);
    if let Some(a) = adapter {
        let path = dir.join(ADAPTER_FILE);
        a.save(&path).map_err(|source| IndexError::Adapter { path, source })?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: spec.name.clone(),
        model: spec.model.clone(),
        dim,
        source_lang: spec.source_lang.clone(),
        adapter: adapter.map(|a| AdapterSummary {
            objective: a.meta.objective,
            strategy: a.meta.strategy,
            apply_to: a.meta.apply_to,
            seed: a.meta.seed,
        }),
        sides: side_manifests,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))
        .map_err(io_err(&path))?;
    Ok(manifest)
}

#[derive(Debug)]
pub struct LoadedSide {
    pub lang: String,
    pub adapted: bool,
    pub matrix: EmbeddingMatrix,
    /// Row-aligned with `matrix`.
    pub payloads: Vec<Payload>,
}

/// A loaded, immutable index.
#[derive(Debug)]
pub struct SearchIndex {
    pub manifest: Manifest,
    pub sides: Vec<LoadedSide>,
    pub adapter: Option<AdapterModel>,
}

fn read_payloads(path: &Path) -> Result<Vec<Payload>, IndexError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IndexError::Payload {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl SearchIndex {
    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let manifest = read_manifest(dir)?;
        let mut sides = Vec::new();
        for s in &manifest.sides {
            let emb_path = dir.join(&s.embeddings);
            let matrix = embedstore::load(&emb_path).map_err(|source| IndexError::Store {
                path: emb_path.clone(),
                source,
            })?;
            if matrix.dim() != manifest.dim {
                return Err(IndexError::Dimension {
                    index: manifest.dim,
                    what: "side",
                    found: matrix.dim(),
                });
            }
            let payloads = read_payloads(&dir.join(&s.payloads))?;
            check_ids(&s.lang, &payloads, &matrix)?;
            if matrix.len() != s.count
                || payloads.iter().zip(matrix.ids()).any(|(p, id)| &p.id != id)
            {
                return Err(IndexError::Manifest {
                    path: dir.join(MANIFEST),
                    message: format!("side {:?} does not match its files", s.lang),
                });
            }
            sides.push(LoadedSide {
                lang: s.lang.clone(),
                adapted: s.adapted,
                matrix,
                payloads,
            });
        }
        let adapter = match &manifest.adapter {
            Some(_) => {
                let path = dir.join(ADAPTER_FILE);
                let a = AdapterModel::load(&path).map_err(|source| IndexError::Adapter {
                    path: path.clone(),
                    source,
                })?;
                if a.dim() != manifest.dim {
                    return Err(IndexError::Dimension {
                        index: manifest.dim,
                        what: "adapter",
                        found: a.dim(),
                    });
                }
                Some(a)
            }
            None => None,
        };
        Ok(Self {
            manifest,
            sides,
            adapter,
        })
    }

    pub fn side(&self, lang: &str) -> Option<&LoadedSide> {
        self.sides.iter().find(|s| s.lang == lang)
    }

    /// Whether a query written in `lang` lives in the adapted space.
    pub fn adapts_queries_in(&self, lang: &str) -> bool {
        self.adapter.is_some() && self.side(lang).is_some_and(|s| s.adapted)
    }

    /// Maps a raw query vector into the index space for `source_lang`.
    pub fn prepare_query(&self, raw: &[f32], source_lang: &str) -> Result<Vec<f32>, IndexError> {
        if raw.len() != self.manifest.dim {
            return Err(IndexError::Dimension {
                index: self.manifest.dim,
                what: "query",
                found: raw.len(),
            });
        }
        match &self.adapter {
            Some(a) if self.adapts_queries_in(source_lang) => {
                a.apply(raw).map_err(|source| IndexError::Adapter {
                    path: PathBuf::from(ADAPTER_FILE),
                    source,
                })
            }
            _ => Ok(raw.to_vec()),
        }
    }

    /// Top-`k` rows of `side` that pass `filters`, ranked by cosine.
    pub fn search(
        &self,
        query: &[f32],
        side: &LoadedSide,
        k: usize,
        filters: &Filters,
    ) -> Vec<SearchHit> {
        let hits = knn_filtered_with(
            query,
            &side.matrix,
            k,
            |i| filters.accepts(&side.payloads[i]),
            Execution::default(),
        );
        let pos: HashMap<&str, usize> = side
            .matrix
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        hits.into_iter()
            .map(|h| {
                let p = &side.payloads[pos[h.id.as_str()]];
                SearchHit {
                    id: h.id,
                    score: h.score,
                    text: p.text.clone(),
                    newspaper: p.newspaper.clone(),
                    year: p.year,
                    article_id: p.article_id.clone(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filters {
    #[serde(default)]
    pub newspaper: Option<String>,
    #[serde(default)]
    pub year_min: Option<i32>,
    #[serde(default)]
    pub year_max: Option<i32>,
}

impl Filters {
    pub fn accepts(&self, p: &Payload) -> bool {
        self.newspaper.as_ref().is_none_or(|n| &p.newspaper == n)
            && self.year_min.is_none_or(|y| p.year >= y)
            && self.year_max.is_none_or(|y| p.year <= y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
    pub text: String,
    pub newspaper: String,
    pub year: i32,
    pub article_id: String,
}
