use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{EmbeddingMatrix, ProviderError, StoreError};
use crate::retry::RetryPolicy;
use crate::Execution;

/// Source of sentence vectors. One provider yields one fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn model_name(&self) -> &str;

    /// Dimension, when known without a request.
    fn dim_hint(&self) -> Option<usize> {
        None
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// Deterministic pseudo-embeddings: a Gaussian direction seeded by the
/// SHA-256 of the model name and text, scaled to unit length.
#[derive(Debug, Clone)]
pub struct StubProvider {
    model: String,
    dim: usize,
    exec: Execution,
}

impl StubProvider {
    pub fn new(model: impl Into<String>, dim: usize) -> Self {
        Self {
            model: model.into(),
            dim,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let raw: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        raw.iter().map(|x| (x / norm) as f32).collect()
    }
}

impl EmbeddingProvider for StubProvider {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn dim_hint(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(self.exec.map(texts, |t| self.vector(t)))
    }
}

/// Looks vectors up by exact text, e.g. precomputed outputs of an external
/// fine-tuned model. File format: JSON lines `{"text": str, "embedding": [f32]}`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    model: String,
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

#[derive(Deserialize)]
struct FileRecord {
    text: String,
    embedding: Vec<f32>,
}

impl FileProvider {
    pub fn from_map(
        model: impl Into<String>,
        vectors: HashMap<String, Vec<f32>>,
    ) -> Result<Self, ProviderError> {
        let dim = vectors.values().next().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(ProviderError::Invalid("file provider needs at least one non-empty vector".into()));
        }
        if let Some((t, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(ProviderError::Invalid(format!(
                "vector for {t:?} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        Ok(Self {
            model: model.into(),
            dim,
            vectors,
        })
    }

    pub fn load(model: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let reader = BufReader::new(File::open(path.as_ref()).map_err(StoreError::Io)?);
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(StoreError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FileRecord = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Invalid(format!("line {}: {e}", i + 1)))?;
            vectors.insert(rec.text, rec.embedding);
        }
        Self::from_map(model, vectors)
    }
}

impl EmbeddingProvider for FileProvider {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn dim_hint(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::UnknownText(t.clone()))
            })
            .collect()
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct RemoteProvider {
    url: String,
    key: Option<String>,
    model: String,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

impl RemoteProvider {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            key,
            model: model.into(),
            retry: RetryPolicy::default(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }

    /// Reads `HISTKIT_EMBED_URL` and `HISTKIT_EMBED_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, ProviderError> {
        let url = std::env::var("HISTKIT_EMBED_URL")
            .map_err(|_| ProviderError::Invalid("HISTKIT_EMBED_URL is not set".into()))?;
        Ok(Self::new(url, std::env::var("HISTKIT_EMBED_KEY").ok(), model))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let mut req = self
            .http
            .post(&self.url)
            .json(&json!({ "model": self.model, "input": texts }));
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::Status(status.as_u16()));
        }
        let body: EmbeddingsResponse = resp
            .json()
            .map_err(|e| ProviderError::Invalid(e.to_string()))?;
        if body.data.len() != texts.len() {
            return Err(ProviderError::Invalid(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                body.data.len()
            )));
        }
        let mut data = body.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        self.retry.run(|_| self.request(texts), |_| true)
    }
}

/// Embeds `texts` in batches; row `i` is `texts[i]` under id `ids[i]`.
pub fn embed_texts(
    provider: &dyn EmbeddingProvider,
    ids: Vec<String>,
    texts: &[String],
    batch_size: usize,
) -> Result<EmbeddingMatrix, ProviderError> {
    assert_eq!(ids.len(), texts.len(), "one id per text");
    if texts.is_empty() {
        return Ok(EmbeddingMatrix::empty(provider.dim_hint().unwrap_or(1))?);
    }
    let mut dim = provider.dim_hint();
    let mut data = Vec::new();
    for (b, chunk) in texts.chunks(batch_size.max(1)).enumerate() {
        let vecs = provider.embed_batch(chunk)?;
        if vecs.len() != chunk.len() {
            return Err(ProviderError::Invalid(format!(
                "batch {b}: {} vectors for {} texts",
                vecs.len(),
                chunk.len()
            )));
        }
        for (j, v) in vecs.into_iter().enumerate() {
            let row = b * batch_size.max(1) + j;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(StoreError::DimensionDrift {
                        row,
                        expected: d,
                        found: v.len(),
                    }
                    .into())
                }
                _ => {}
            }
            data.extend(v);
        }
    }
    Ok(EmbeddingMatrix::new(dim.unwrap_or(1), ids, data, false)?)
}
