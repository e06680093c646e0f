//! Embedding and completion clients against an in-process mock service.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use matlas_core::client::{ClientError, CompletionClient, HttpCompletionClient, RetryPolicy};
use matlas_core::embed::{EmbedError, Embedder, HttpEmbedder};

#[derive(Default)]
struct Seen {
    calls: AtomicUsize,
    batch_sizes: Mutex<Vec<usize>>,
    auth: Mutex<Vec<Option<String>>>,
}

fn fake_vector(text: &str) -> Vec<f32> {
    vec![text.len() as f32, 1.0, 0.0, 0.0]
}

async fn embeddings(State(seen): State<Arc<Seen>>, Json(body): Json<Value>) -> Response {
    // The first request fails once to exercise the retry path.
    if seen.calls.fetch_add(1, Ordering::SeqCst) == 0 {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    let inputs: Vec<String> = serde_json::from_value(body["input"].clone()).unwrap();
    seen.batch_sizes.lock().unwrap().push(inputs.len());
    // Reversed on purpose: clients must order by `index`.
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"object": "embedding", "index": i, "embedding": fake_vector(t)}))
        .collect();
    Json(json!({"object": "list", "data": data})).into_response()
}

async fn bare(Json(body): Json<Value>) -> Json<Vec<Vec<f32>>> {
    let inputs: Vec<String> = serde_json::from_value(body["input"].clone()).unwrap();
    Json(inputs.iter().map(|t| fake_vector(t)).collect())
}

async fn short(Json(_): Json<Value>) -> Json<Value> {
    Json(json!({"data": [{"index": 0, "embedding": [1.0, 2.0]}]}))
}

async fn down(State(seen): State<Arc<Seen>>) -> StatusCode {
    seen.calls.fetch_add(1, Ordering::SeqCst);
    StatusCode::INTERNAL_SERVER_ERROR
}

async fn bad_request(State(seen): State<Arc<Seen>>) -> StatusCode {
    seen.calls.fetch_add(1, Ordering::SeqCst);
    StatusCode::BAD_REQUEST
}

async fn chat(State(seen): State<Arc<Seen>>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    seen.auth
        .lock()
        .unwrap()
        .push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    assert_eq!(body["temperature"], 0.0);
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": format!("echo: {prompt}")}}]}))
}

fn spawn(app: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 1,
    }
}

fn embedder(addr: SocketAddr, path: &str, batch: usize) -> HttpEmbedder {
    HttpEmbedder::new(format!("http://{addr}{path}"), "m", 4, batch, retry(), Duration::from_secs(5)).unwrap()
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| "x".repeat(i + 1)).collect()
}

#[test]
fn embedder_batches_retries_and_orders() {
    let seen = Arc::new(Seen::default());
    let addr = spawn(Router::new().route("/embeddings", post(embeddings)).with_state(seen.clone()));
    let e = embedder(addr, "/embeddings", 2);
    let out = e.embed(&texts(5)).unwrap();
    assert_eq!(out, texts(5).iter().map(|t| fake_vector(t)).collect::<Vec<_>>());
    assert_eq!(*seen.batch_sizes.lock().unwrap(), [2, 2, 1]);
    assert_eq!(seen.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn embedder_accepts_bare_arrays() {
    let addr = spawn(Router::new().route("/embed", post(bare)));
    let out = embedder(addr, "/embed", 8).embed(&texts(3)).unwrap();
    assert_eq!(out[2], fake_vector("xxx"));
}

#[test]
fn embedder_rejects_wrong_shapes() {
    let addr = spawn(Router::new().route("/short", post(short)));
    let err = embedder(addr, "/short", 8).embed(&texts(1)).unwrap_err();
    assert_eq!(err, EmbedError::Dimension { expected: 4, got: 2 });
    let err = embedder(addr, "/short", 8).embed(&texts(2)).unwrap_err();
    assert_eq!(err, EmbedError::Count { expected: 2, got: 1 });
}

#[test]
fn embedder_gives_up_after_bounded_retries() {
    let seen = Arc::new(Seen::default());
    let app = Router::new()
        .route("/down", post(down))
        .route("/bad", post(bad_request))
        .with_state(seen.clone());
    let addr = spawn(app);
    let err = embedder(addr, "/down", 8).embed(&texts(1)).unwrap_err();
    assert!(matches!(err, EmbedError::Client(ClientError::Status { status: 500, .. })));
    assert_eq!(seen.calls.swap(0, Ordering::SeqCst), 3);
    let err = embedder(addr, "/bad", 8).embed(&texts(1)).unwrap_err();
    assert!(matches!(err, EmbedError::Client(ClientError::Status { status: 400, .. })));
    assert_eq!(seen.calls.load(Ordering::SeqCst), 1, "client errors are not retried");
}

#[test]
fn embedder_reports_unreachable_service() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = embedder(addr, "/embeddings", 8).embed(&texts(1)).unwrap_err();
    assert!(matches!(err, EmbedError::Client(ClientError::Transport(_))));
}

#[test]
fn completion_client_round_trip() {
    let seen = Arc::new(Seen::default());
    let addr = spawn(Router::new().route("/v1/chat/completions", post(chat)).with_state(seen.clone()));
    let endpoint = format!("http://{addr}/v1/chat/completions");
    let keyed = HttpCompletionClient::new(&endpoint, "m", Some("k3y".into()), retry(), Duration::from_secs(5)).unwrap();
    assert_eq!(keyed.complete("hello").unwrap(), "echo: hello");
    let anon = HttpCompletionClient::new(&endpoint, "m", None, retry(), Duration::from_secs(5)).unwrap();
    anon.complete("again").unwrap();
    assert_eq!(*seen.auth.lock().unwrap(), [Some("Bearer k3y".to_string()), None]);
}
