use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use matlas_core::corpus::{DocumentMeta, SourceKind};
use matlas_core::embed::HashingEmbedder;
use matlas_core::index::SearchFilters;
use matlas_core::synth::{generate, SynthDocument, SynthOptions};
use matlas_core::{Components, Pipeline, PipelineConfig, Store};
use matlas_server::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    pipeline: Pipeline,
    state: Arc<AppState>,
    app: Router,
}

fn meta(doc_id: &str) -> DocumentMeta {
    DocumentMeta {
        doc_id: doc_id.into(),
        source_kind: SourceKind::Textbook,
        journal_id: None,
        year: 1999,
        title: doc_id.into(),
    }
}

fn fixture(corpus: &[SynthDocument], extra: &[(&str, &str)], build: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let mut ids = Vec::new();
    for d in corpus {
        store.ingest_document(&d.markdown, d.meta.clone(), false).unwrap();
        ids.push(d.meta.doc_id.clone());
    }
    for (id, text) in extra {
        store.ingest_document(text, meta(id), false).unwrap();
        ids.push(id.to_string());
    }
    let config = PipelineConfig {
        ui_origin: Some("http://localhost:5173".into()),
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config.clone(), store.clone(), Components::offline(256));
    if build {
        for (id, r) in pipeline.process_all(&ids) {
            r.unwrap_or_else(|e| panic!("{id}: {e}"));
        }
        pipeline.build_index().unwrap();
    }
    let state = Arc::new(AppState::new(config, store, Arc::new(HashingEmbedder::new(256))).unwrap());
    let app = router(state.clone());
    Fixture {
        _dir: dir,
        pipeline,
        state,
        app,
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

const CHAIN: &str = "**Definition 1.** Alpha objects.\n\n**Lemma 2.** By Definition 1, beta.\n\n\
**Theorem 3.** By Lemma 2, gamma.\n";
const EDGELESS: &str = "**Lemma 1.** One.\n\n**Lemma 2.** Two.\n\n**Remark 3.** Three.\n";

#[tokio::test]
async fn empty_store_reports_zeros_and_unready_index() {
    let f = fixture(&[], &[], false);
    let (status, body) = get(&f.app, "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "index_size": 0, "docs": 0, "statements": 0}));
    let (status, _) = post(&f.app, "/v1/search", r#"{"query": "x", "k": 3}"#).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn health_counts_match_ground_truth() {
    let corpus = generate(&SynthOptions {
        documents: 4,
        ..Default::default()
    });
    let f = fixture(&corpus, &[], true);
    let truth: usize = corpus.iter().map(|d| d.statements.len()).sum();
    let (_, body) = get(&f.app, "/healthz").await;
    assert_eq!(body["docs"], 4);
    assert_eq!(body["statements"], truth);
    assert_eq!(body["index_size"], truth);
}

#[tokio::test]
async fn planted_queries_rank_first_and_hits_resolve() {
    let corpus = generate(&SynthOptions {
        documents: 5,
        ..Default::default()
    });
    let f = fixture(&corpus, &[], true);
    for d in &corpus {
        let req = json!({"query": d.planted.query, "k": 5}).to_string();
        let (status, body) = post(&f.app, "/v1/search", &req).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let hits = body["hits"].as_array().unwrap();
        assert_eq!(hits[0]["stmt_id"], d.planted.stmt_id.as_str());
        assert!(hits[0]["unfolded_text"].as_str().unwrap().contains(&d.statements[0].content));
        for h in hits {
            let id = h["stmt_id"].as_str().unwrap();
            let (status, detail) = get(&f.app, &format!("/v1/statements/{id}")).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(detail["stmt_id"], id);
        }
    }
}

#[tokio::test]
async fn hit_order_is_the_index_order() {
    let corpus = generate(&SynthOptions {
        documents: 3,
        ..Default::default()
    });
    let f = fixture(&corpus, &[], true);
    let index = f.state.snapshot().index.clone().unwrap();
    let q = matlas_core::Query {
        text: "suppose then by lemma".into(),
        k: 20,
        filters: SearchFilters::default(),
    };
    let direct = f.pipeline.search(&index, &q).unwrap();
    let (_, body) = post(&f.app, "/v1/search", r#"{"query": "suppose then by lemma", "k": 20}"#).await;
    let served: Vec<(String, f64)> = body["hits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| (h["stmt_id"].as_str().unwrap().to_string(), h["score"].as_f64().unwrap()))
        .collect();
    let expected: Vec<(String, f64)> = direct.hits.into_iter().map(|h| (h.stmt_id, h.score)).collect();
    assert_eq!(served, expected);
}

#[tokio::test]
async fn search_validation_and_clamping() {
    let f = fixture(&[], &[("chain", CHAIN)], true);
    let (status, _) = post(&f.app, "/v1/search", r#"{"query": "", "k": 5}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&f.app, "/v1/search", r#"{"query": 3}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&f.app, "/v1/search", "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = post(&f.app, "/v1/search", r#"{"query": "", "k": 0}"#).await;
    assert_eq!((status, body["hits"].as_array().unwrap().len()), (StatusCode::OK, 0));

    let (status, body) = post(&f.app, "/v1/search", r#"{"query": "gamma", "k": 500}"#).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((body["k"].as_u64(), body["clamped"].as_bool()), (Some(100), Some(true)));
    assert_eq!(body["hits"].as_array().unwrap().len(), 3);
    let (_, body) = post(&f.app, "/v1/search", r#"{"query": "gamma"}"#).await;
    assert_eq!((body["k"].as_u64(), body["clamped"].as_bool()), (Some(10), Some(false)));
    assert!(body["took_ms"].is_u64());
    let (_, body) = post(&f.app, "/v1/search", r#"{"query": "gamma", "k": 5, "filters": {"kinds": ["lemma"]}}"#).await;
    let hits = body["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0]["kind"], "lemma");
}

#[tokio::test]
async fn statement_detail() {
    let f = fixture(&[], &[("chain", CHAIN)], true);
    let (status, body) = get(&f.app, "/v1/statements/chain:0").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["layer"], 0);
    assert_eq!(body["deps"], json!([]));
    assert_eq!(body["dependents"][0]["label"], "Lemma 2");
    let lemma = format!("chain:{}", CHAIN.find("**Lemma").unwrap());
    let (_, body) = get(&f.app, &format!("/v1/statements/{lemma}")).await;
    assert_eq!(body["deps"][0]["stmt_id"], "chain:0");
    assert_eq!(body["unfolded"]["unfolded_text"], "[Requires Definition 1] Alpha objects. By Definition 1, beta.");
    let (status, _) = get(&f.app, "/v1/statements/chain:1").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn document_graphs() {
    let f = fixture(&[], &[("chain", CHAIN), ("flat", EDGELESS)], true);
    let (status, body) = get(&f.app, "/v1/documents/chain/graph").await;
    assert_eq!(status, StatusCode::OK);
    let layers: Vec<u64> = body["nodes"].as_array().unwrap().iter().map(|n| n["layer"].as_u64().unwrap()).collect();
    assert_eq!(layers, [0, 1, 2]);
    assert_eq!(body["edges"].as_array().unwrap().len(), 2);
    let (_, body) = get(&f.app, "/v1/documents/flat/graph").await;
    assert!(body["nodes"].as_array().unwrap().iter().all(|n| n["layer"] == 0));
    let (status, _) = get(&f.app, "/v1/documents/nope/graph").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn config_is_echoed() {
    let f = fixture(&[], &[], false);
    let (_, body) = get(&f.app, "/v1/config").await;
    let echoed: PipelineConfig = serde_json::from_value(body).unwrap();
    assert_eq!(&echoed, f.pipeline.config());
    assert_eq!((echoed.batch_size, echoed.window_length), (5, 4000));
}

#[tokio::test]
async fn health_answers_during_search() {
    let f = fixture(&[], &[("chain", CHAIN)], true);
    let (a, b) = tokio::join!(
        post(&f.app, "/v1/search", r#"{"query": "beta", "k": 2}"#),
        get(&f.app, "/healthz"),
    );
    assert_eq!((a.0, b.0), (StatusCode::OK, StatusCode::OK));
}

#[tokio::test]
async fn reload_swaps_snapshot() {
    let f = fixture(&[], &[("chain", CHAIN)], false);
    let before = f.state.snapshot();
    assert!(before.index.is_none());
    f.pipeline.process("chain").unwrap();
    f.pipeline.build_index().unwrap();
    let (status, body) = post(&f.app, "/v1/reload", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["index_size"], 3);
    assert!(before.index.is_none(), "old snapshot untouched");
    let (status, _) = post(&f.app, "/v1/search", r#"{"query": "beta", "k": 1}"#).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn cors_allows_ui_origin() {
    let f = fixture(&[], &[], false);
    let req = Request::get("/healthz")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
}
