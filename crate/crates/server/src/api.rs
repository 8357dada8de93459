use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use histkit_core::embedstore::EmbeddingProvider;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::index::{Filters, SearchHit, SearchIndex};

pub const MAX_K: usize = 100;
/// Seconds a client should wait after a provider failure.
pub const RETRY_AFTER_SECS: u64 = 5;

#[derive(Debug, Clone)]
pub enum IndexSlot {
    Empty,
    Loading,
    Ready(Arc<SearchIndex>),
    Failed(String),
}

impl IndexSlot {
    fn label(&self) -> &'static str {
        match self {
            IndexSlot::Empty => "empty",
            IndexSlot::Loading => "loading",
            IndexSlot::Ready(_) => "ready",
            IndexSlot::Failed(_) => "failed",
        }
    }
}

/// Upper bucket bounds in milliseconds; the last bucket is open.
pub const LATENCY_BUCKETS_MS: [f64; 10] = [1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0];

#[derive(Debug, Clone, Default)]
struct Stats {
    queries: u64,
    errors: u64,
    total_ms: f64,
    buckets: [u64; LATENCY_BUCKETS_MS.len() + 1],
}

impl Stats {
    fn record(&mut self, elapsed: Duration) {
        let ms = elapsed.as_secs_f64() * 1000.0;
        self.queries += 1;
        self.total_ms += ms;
        let b = LATENCY_BUCKETS_MS
            .iter()
            .position(|&le| ms <= le)
            .unwrap_or(LATENCY_BUCKETS_MS.len());
        self.buckets[b] += 1;
    }
}

#[derive(Clone)]
pub struct AppState {
    slot: Arc<RwLock<IndexSlot>>,
    provider: Arc<dyn EmbeddingProvider>,
    stats: Arc<Mutex<Stats>>,
    started: Instant,
}

impl AppState {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            slot: Arc::new(RwLock::new(IndexSlot::Empty)),
            provider,
            stats: Arc::default(),
            started: Instant::now(),
        }
    }

    pub fn with_index(self, index: SearchIndex) -> Self {
        self.set(IndexSlot::Ready(Arc::new(index)));
        self
    }

    pub fn set(&self, slot: IndexSlot) {
        *self.slot.write().expect("index lock") = slot;
    }

    pub fn slot(&self) -> IndexSlot {
        self.slot.read().expect("index lock").clone()
    }

    /// Marks the index as loading and loads it on the blocking pool. Readers
    /// keep whatever snapshot they already hold.
    pub fn spawn_load(&self, dir: PathBuf) -> tokio::task::JoinHandle<()> {
        self.set(IndexSlot::Loading);
        let state = self.clone();
        tokio::task::spawn_blocking(move || match SearchIndex::load(&dir) {
            Ok(index) => {
                log::info!(
                    "loaded index {:?}: {} sentences",
                    index.manifest.name,
                    index.manifest.sentence_count()
                );
                state.set(IndexSlot::Ready(Arc::new(index)));
            }
            Err(e) => {
                log::error!("index load failed: {e}");
                state.set(IndexSlot::Failed(e.to_string()));
            }
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retry_after: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            retry_after: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(json!({ "error": self.message }))).into_response();
        if let Some(secs) = self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
    pub source_lang: String,
    pub target_side: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub filters: Option<Filters>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub k: usize,
    pub source_lang: String,
    pub target_side: String,
    pub filters: Filters,
    pub adapter_applied: bool,
    pub model: String,
    pub index: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<SearchHit>,
    pub config: EffectiveConfig,
}

fn ready_index(state: &AppState) -> Result<Arc<SearchIndex>, ApiError> {
    match state.slot() {
        IndexSlot::Ready(ix) => Ok(ix),
        IndexSlot::Loading => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index is loading")),
        IndexSlot::Empty => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no index loaded")),
        IndexSlot::Failed(e) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            format!("index failed to load: {e}"),
        )),
    }
}

async fn query(State(state): State<AppState>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let started = Instant::now();
    let result = run_query(&state, &body).await;
    let mut stats = state.stats.lock().expect("stats lock");
    match &result {
        Ok(_) => stats.record(started.elapsed()),
        Err(_) => stats.errors += 1,
    }
    result.map(Json)
}

async fn run_query(state: &AppState, body: &[u8]) -> Result<QueryResponse, ApiError> {
    let req: QueryRequest = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    if req.k == 0 || req.k > MAX_K {
        return Err(ApiError::bad_request(format!("k must be in 1..={MAX_K}, got {}", req.k)));
    }
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text is empty"));
    }
    let filters = req.filters.clone().unwrap_or_default();
    if let (Some(lo), Some(hi)) = (filters.year_min, filters.year_max) {
        if lo > hi {
            return Err(ApiError::bad_request("year_min is greater than year_max"));
        }
    }
    let index = ready_index(state)?;
    if index.side(&req.target_side).is_none() {
        let known: Vec<&str> = index.sides.iter().map(|s| s.lang.as_str()).collect();
        return Err(ApiError::bad_request(format!(
            "unknown target_side {:?}; index has {known:?}",
            req.target_side
        )));
    }

    let provider = state.provider.clone();
    let text = req.text.clone();
    let embedded = tokio::task::spawn_blocking(move || provider.embed_batch(&[text]))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let raw = match embedded {
        Ok(mut v) if v.len() == 1 => v.pop().expect("one vector"),
        Ok(v) => {
            return Err(ApiError::new(
                StatusCode::BAD_GATEWAY,
                format!("provider returned {} vectors for one text", v.len()),
            ))
        }
        Err(e) => {
            return Err(ApiError {
                status: StatusCode::BAD_GATEWAY,
                message: format!("embedding provider failed: {e}"),
                retry_after: Some(RETRY_AFTER_SECS),
            })
        }
    };
    let q = index
        .prepare_query(&raw, &req.source_lang)
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()))?;
    let side = index.side(&req.target_side).expect("checked above");
    let hits = index.search(&q, side, req.k, &filters);
    Ok(QueryResponse {
        hits,
        config: EffectiveConfig {
            k: req.k,
            adapter_applied: index.adapts_queries_in(&req.source_lang),
            source_lang: req.source_lang,
            target_side: req.target_side,
            filters,
            model: state.provider.model_name().to_string(),
            index: index.manifest.name.clone(),
        },
    })
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let queries = state.stats.lock().expect("stats lock").queries;
    Json(json!({
        "status": "ok",
        "index": state.slot().label(),
        "queries": queries,
        "uptime_secs": state.started.elapsed().as_secs(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub name: String,
    pub model: String,
    pub dim: usize,
    pub source_lang: String,
    pub language_pairs: Vec<(String, String)>,
    pub sentence_count: usize,
    pub sides: Vec<SideInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideInfo {
    pub lang: String,
    pub count: usize,
    pub adapted: bool,
}

async fn corpora(State(state): State<AppState>) -> Json<Vec<CorpusInfo>> {
    let list = match state.slot() {
        IndexSlot::Ready(ix) => {
            let m = &ix.manifest;
            vec![CorpusInfo {
                name: m.name.clone(),
                model: m.model.clone(),
                dim: m.dim,
                source_lang: m.source_lang.clone(),
                language_pairs: m.language_pairs(),
                sentence_count: m.sentence_count(),
                sides: m
                    .sides
                    .iter()
                    .map(|s| SideInfo {
                        lang: s.lang.clone(),
                        count: s.count,
                        adapted: s.adapted,
                    })
                    .collect(),
            }]
        }
        _ => Vec::new(),
    };
    Json(list)
}

async fn stats(State(state): State<AppState>) -> Json<serde_json::Value> {
    let s = state.stats.lock().expect("stats lock").clone();
    let histogram: Vec<serde_json::Value> = s
        .buckets
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let le = LATENCY_BUCKETS_MS
                .get(i)
                .map_or(json!("inf"), |v| json!(v));
            json!({ "le_ms": le, "count": count })
        })
        .collect();
    Json(json!({
        "queries": s.queries,
        "errors": s.errors,
        "mean_ms": if s.queries == 0 { 0.0 } else { s.total_ms / s.queries as f64 },
        "histogram": histogram,
        "uptime_secs": state.started.elapsed().as_secs(),
    }))
}

/// `cors_origin = None` allows any origin.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/corpora", get(corpora))
        .route("/stats", get(stats))
        .route("/query", post(query))
        .layer(cors)
        .with_state(state)
}
