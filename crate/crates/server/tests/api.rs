use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use histkit_core::adapt::{AdapterMeta, AdapterModel, ApplyTo, Objective, Strategy};
use histkit_core::embedstore::{
    embed_texts, knn, EmbeddingProvider, ProviderError, StubProvider,
};
use histkit_server::index::{read_manifest, IndexError};
use histkit_server::{build_index, router, AppState, IndexSlot, IndexSpec, Payload, SearchIndex, SideInput};
use serde_json::{json, Value};
use tower::ServiceExt;

const MODEL: &str = "stub-test";
const DIM: usize = 32;

fn stub() -> StubProvider {
    StubProvider::new(MODEL, DIM)
}

fn payloads(lang: &str) -> Vec<Payload> {
    (0..10)
        .map(|i| Payload {
            id: format!("art{}#{}", i / 4, i % 4),
            text: format!("{lang} sentence number {i} about the harbour"),
            article_id: format!("art{}", i / 4),
            newspaper: if i % 2 == 0 { "Wort" } else { "Tageblatt" }.into(),
            year: 1900 + 5 * i as i32,
        })
        .collect()
}

fn side(lang: &str) -> SideInput {
    let payloads = payloads(lang);
    let texts: Vec<String> = payloads.iter().map(|p| p.text.clone()).collect();
    let ids = payloads.iter().map(|p| p.id.clone()).collect();
    SideInput {
        lang: lang.into(),
        embeddings: embed_texts(&stub(), ids, &texts, 4).unwrap(),
        payloads,
    }
}

fn spec() -> IndexSpec {
    IndexSpec {
        name: "fixture".into(),
        model: MODEL.into(),
        source_lang: "lb".into(),
    }
}

fn build(dir: &Path, adapter: Option<&AdapterModel>) {
    build_index(&spec(), &[side("lb"), side("de")], adapter, dir).unwrap();
}

fn app_with(dir: &Path) -> Router {
    let state = AppState::new(Arc::new(stub())).with_index(SearchIndex::load(dir).unwrap());
    router(state, None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, Option<String>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let retry = resp
        .headers()
        .get(header::RETRY_AFTER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v, retry)
}

fn query(text: &str, side: &str, k: usize) -> Value {
    json!({ "text": text, "source_lang": "lb", "target_side": side, "k": k })
}

#[tokio::test]
async fn indexed_sentence_ranks_first_with_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let index = SearchIndex::load(&ix).unwrap();
    assert_eq!(index.side("lb").unwrap().payloads.len(), 10);

    let app = app_with(&ix);
    let text = "lb sentence number 6 about the harbour";
    let (status, body, _) = call(&app, "POST", "/query", Some(query(text, "lb", 5))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let hits = body["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 5);
    assert_eq!(hits[0]["id"], "art1#2");
    assert_eq!(hits[0]["text"], text);
    assert!((hits[0]["score"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(hits[0]["year"], 1930);
    assert_eq!(body["config"]["k"], 5);
    assert_eq!(body["config"]["adapter_applied"], false);
}

#[tokio::test]
async fn ordering_matches_the_knn_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let app = app_with(&ix);
    let text = "a harbour sentence that is not in the index";
    let (_, body, _) = call(&app, "POST", "/query", Some(query(text, "de", 10))).await;
    let got: Vec<&str> = body["hits"].as_array().unwrap().iter().map(|h| h["id"].as_str().unwrap()).collect();

    let de = side("de");
    let q = stub().vector(text);
    let oracle: Vec<String> = knn(&q, &de.embeddings, 10, &HashSet::new()).into_iter().map(|h| h.id).collect();
    assert_eq!(got, oracle);
    let scores: Vec<f64> = body["hits"].as_array().unwrap().iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));
}

#[tokio::test]
async fn year_filter_promotes_next_hit_and_keeps_order() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let app = app_with(&ix);
    let text = "lb sentence number 6 about the harbour";
    let (_, all, _) = call(&app, "POST", "/query", Some(query(text, "lb", 10))).await;
    let all: Vec<Value> = all["hits"].as_array().unwrap().clone();
    assert_eq!(all[0]["year"], 1930);

    let mut req = query(text, "lb", 3);
    req["filters"] = json!({ "year_min": 1935 });
    let (status, filtered, _) = call(&app, "POST", "/query", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let filtered = filtered["hits"].as_array().unwrap();
    assert_eq!(filtered.len(), 3, "k honoured after filtering");
    let expected: Vec<&Value> = all.iter().filter(|h| h["year"].as_i64().unwrap() >= 1935).take(3).collect();
    assert_eq!(filtered.iter().collect::<Vec<_>>(), expected);

    let mut req = query(text, "lb", 10);
    req["filters"] = json!({ "newspaper": "Wort", "year_max": 1920 });
    let (_, filtered, _) = call(&app, "POST", "/query", Some(req)).await;
    let expected: Vec<&Value> = all
        .iter()
        .filter(|h| h["newspaper"] == "Wort" && h["year"].as_i64().unwrap() <= 1920)
        .collect();
    assert_eq!(filtered["hits"].as_array().unwrap().iter().collect::<Vec<_>>(), expected);
}

#[tokio::test]
async fn identity_adapter_matches_plain_index() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    let adapted = dir.path().join("adapted");
    build(&plain, None);
    let identity = AdapterModel::identity(AdapterMeta {
        dim: DIM,
        objective: Objective::Contrastive,
        strategy: Strategy::Hist,
        apply_to: ApplyTo::Source,
        seed: 0,
        scale: 20.0,
        learning_rate: 2e-5,
        batch_size: 8,
        epochs: 1,
        hist_pairs: 0,
        modern_pairs: 0,
        steps: 0,
    });
    build(&adapted, Some(&identity));
    let m = read_manifest(&adapted).unwrap();
    assert!(m.sides.iter().find(|s| s.lang == "lb").unwrap().adapted);
    assert!(!m.sides.iter().find(|s| s.lang == "de").unwrap().adapted);

    let (a, b) = (app_with(&plain), app_with(&adapted));
    for side in ["lb", "de"] {
        let q = query("sentence about the harbour in 1910", side, 10);
        let (_, x, _) = call(&a, "POST", "/query", Some(q.clone())).await;
        let (_, y, _) = call(&b, "POST", "/query", Some(q)).await;
        assert_eq!(y["config"]["adapter_applied"], true);
        for (h1, h2) in x["hits"].as_array().unwrap().iter().zip(y["hits"].as_array().unwrap()) {
            assert_eq!(h1["id"], h2["id"]);
            assert!((h1["score"].as_f64().unwrap() - h2["score"].as_f64().unwrap()).abs() < 1e-6);
        }
    }
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let app = app_with(&ix);
    for bad in [
        query("x", "lb", 0),
        query("x", "lb", 101),
        query("", "lb", 3),
        query("x", "fr", 3),
        json!({ "text": "x" }),
        json!({ "text": "x", "source_lang": "lb", "target_side": "lb", "filters": { "year_min": 1950, "year_max": 1900 } }),
        json!({ "text": "x", "source_lang": "lb", "target_side": "lb", "bogus": 1 }),
    ] {
        let (status, body, _) = call(&app, "POST", "/query", Some(bad.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad} -> {body}");
        assert!(body["error"].is_string());
    }
    let req = Request::post("/query").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn health_corpora_and_stats() {
    let app = router(AppState::new(Arc::new(stub())), None);
    let (status, health, _) = call(&app, "GET", "/health", None).await;
    assert_eq!((status, &health["status"], &health["queries"]), (StatusCode::OK, &json!("ok"), &json!(0)));
    let (_, corpora, _) = call(&app, "GET", "/corpora", None).await;
    assert_eq!(corpora, json!([]));
    let (status, _, _) = call(&app, "POST", "/query", Some(query("x", "lb", 3))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let app = app_with(&ix);
    for i in 0..3 {
        let (status, _, _) = call(&app, "POST", "/query", Some(query(&format!("q {i}"), "de", 3))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, stats, _) = call(&app, "GET", "/stats", None).await;
    assert_eq!(stats["queries"], 3);
    let bucket_total: u64 = stats["histogram"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(bucket_total, 3);
    let (_, corpora, _) = call(&app, "GET", "/corpora", None).await;
    assert_eq!(corpora[0]["sentence_count"], 20);
    assert_eq!(corpora[0]["language_pairs"], json!([["lb", "de"]]));
}

#[tokio::test]
async fn loading_index_gives_503() {
    let state = AppState::new(Arc::new(stub()));
    state.set(IndexSlot::Loading);
    let app = router(state.clone(), None);
    let (status, body, _) = call(&app, "POST", "/query", Some(query("x", "lb", 3))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "index is loading");
    let (_, health, _) = call(&app, "GET", "/health", None).await;
    assert_eq!(health["index"], "loading");

    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    state.spawn_load(ix).await.unwrap();
    let (status, _, _) = call(&app, "POST", "/query", Some(query("x", "lb", 3))).await;
    assert_eq!(status, StatusCode::OK);
}

struct Failing;

impl EmbeddingProvider for Failing {
    fn model_name(&self) -> &str {
        "failing"
    }
    fn embed_batch(&self, _: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Err(ProviderError::Status(500))
    }
}

#[tokio::test]
async fn provider_failure_is_502_with_retry_after() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let app = router(AppState::new(Arc::new(Failing)).with_index(SearchIndex::load(&ix).unwrap()), None);
    let (status, _, retry) = call(&app, "POST", "/query", Some(query("x", "lb", 3))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(retry.as_deref(), Some("5"));
}

#[tokio::test]
async fn restart_reproduces_responses() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    let q = query("harbour news", "de", 7);
    let (_, first, _) = call(&app_with(&ix), "POST", "/query", Some(q.clone())).await;
    let (_, second, _) = call(&app_with(&ix), "POST", "/query", Some(q)).await;
    assert_eq!(first, second);
}

#[test]
fn id_mismatch_lists_first_ten_offenders() {
    let mut s = side("lb");
    for i in 0..15 {
        s.payloads.push(Payload {
            id: format!("orphan{i:02}"),
            text: "x".into(),
            article_id: "o".into(),
            newspaper: "Wort".into(),
            year: 1900,
        });
    }
    let dir = tempfile::tempdir().unwrap();
    let err = build_index(&spec(), &[s], None, &dir.path().join("ix")).unwrap_err();
    match err {
        IndexError::IdMismatch { missing_embedding, missing_payload, .. } => {
            assert_eq!(missing_embedding.len(), 10);
            assert_eq!(missing_embedding[0], "orphan00");
            assert!(missing_payload.is_empty());
        }
        other => panic!("{other}"),
    }
    assert!(!dir.path().join("ix").exists());
}

#[test]
fn corrupted_manifest_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    std::fs::write(ix.join("manifest.json"), b"{\"format_version\": 1, \"name\": ").unwrap();
    assert!(matches!(read_manifest(&ix), Err(IndexError::Manifest { .. })));
    assert!(matches!(SearchIndex::load(&ix), Err(IndexError::Manifest { .. })));

    build(&ix, None);
    let hxem = ix.join("de.hxem");
    let bytes = std::fs::read(&hxem).unwrap();
    std::fs::write(&hxem, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(SearchIndex::load(&ix), Err(IndexError::Store { .. })));
}

#[test]
fn rebuild_replaces_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let ix = dir.path().join("ix");
    build(&ix, None);
    build_index(&spec(), &[side("fr")], None, &ix).unwrap();
    let m = read_manifest(&ix).unwrap();
    assert_eq!(m.sides.len(), 1);
    assert_eq!(m.sides[0].lang, "fr");
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("ix")]);
}
