//! JSON-over-HTTP facade over a pipeline store: search, statement detail,
//! per-document graphs, health and config echo.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use matlas_core::embed::Embedder;
use matlas_core::graph::{GraphExport, UnfoldedStatement, UNFOLDED_SCHEMA};
use matlas_core::index::{FlatIndex, Query, SearchFilters};
use matlas_core::pipeline::{search_with, PipelineError};
use matlas_core::store::{Artifact, Store, StoreError};
use matlas_core::{PipelineConfig, StatementKind, StructuredStatement};

pub const BIND_ENV: &str = "MATLAS_BIND";
pub const DEFAULT_K: i64 = 10;
pub const MAX_K: i64 = 100;
const SNIPPET_CHARS: usize = 240;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("invalid bind address {0:?}")]
    BadAddr(String),
    #[error(transparent)]
    Config(#[from] matlas_core::config::ConfigError),
}

/// One statement with everything the detail view needs.
#[derive(Debug, Clone, Serialize)]
pub struct StatementDetail {
    pub schema: &'static str,
    pub stmt_id: String,
    pub statement: StructuredStatement,
    pub unfolded: Option<UnfoldedStatement>,
    pub layer: Option<usize>,
    pub deps: Vec<NodeRef>,
    pub dependents: Vec<NodeRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRef {
    pub stmt_id: String,
    pub label: Option<String>,
    pub kind: StatementKind,
}

/// An immutable view of the store, swapped whole on reload.
#[derive(Debug, Default)]
pub struct ServiceData {
    pub index: Option<Arc<FlatIndex>>,
    pub statements: HashMap<String, StatementDetail>,
    pub graphs: HashMap<String, GraphExport>,
    pub documents: usize,
}

impl ServiceData {
    pub fn load(store: &Store) -> Result<Self, StoreError> {
        let mut data = ServiceData {
            index: store.load_index()?.map(Arc::new),
            ..Default::default()
        };
        let doc_ids = store.doc_ids()?;
        data.documents = doc_ids.len();
        for doc_id in doc_ids {
            let statements = store.read_statements(&doc_id)?;
            let unfolded: Vec<UnfoldedStatement> = store
                .read_records(&doc_id, Artifact::Unfolded, UNFOLDED_SCHEMA)?
                .unwrap_or_default();
            let mut unfolded: HashMap<String, UnfoldedStatement> =
                unfolded.into_iter().map(|u| (u.stmt_id.clone(), u)).collect();
            let graph: Option<GraphExport> = store.read_json(&doc_id, Artifact::Graph)?;
            let by_id: HashMap<&str, &StructuredStatement> =
                statements.iter().map(|s| (s.stmt_id.as_str(), s)).collect();
            let node_ref = |id: &str| {
                by_id.get(id).map(|s| NodeRef {
                    stmt_id: s.stmt_id.clone(),
                    label: s.label.clone(),
                    kind: s.kind,
                })
            };
            let mut layers: HashMap<&str, usize> = HashMap::new();
            let mut deps: HashMap<&str, Vec<NodeRef>> = HashMap::new();
            let mut dependents: HashMap<&str, Vec<NodeRef>> = HashMap::new();
            if let Some(g) = &graph {
                layers.extend(g.nodes.iter().map(|n| (n.stmt_id.as_str(), n.layer)));
                for e in &g.edges {
                    deps.entry(e.to.as_str()).or_default().extend(node_ref(&e.from));
                    dependents.entry(e.from.as_str()).or_default().extend(node_ref(&e.to));
                }
            }
            for s in &statements {
                let id = s.stmt_id.as_str();
                data.statements.insert(
                    s.stmt_id.clone(),
                    StatementDetail {
                        schema: "statement/v1",
                        stmt_id: s.stmt_id.clone(),
                        statement: s.clone(),
                        unfolded: unfolded.remove(&s.stmt_id),
                        layer: layers.get(id).copied(),
                        deps: deps.remove(id).unwrap_or_default(),
                        dependents: dependents.remove(id).unwrap_or_default(),
                    },
                );
            }
            if let Some(g) = graph {
                data.graphs.insert(doc_id, g);
            }
        }
        Ok(data)
    }
}

pub struct AppState {
    config: PipelineConfig,
    store: Arc<Store>,
    embedder: Arc<dyn Embedder>,
    data: RwLock<Arc<ServiceData>>,
}

impl AppState {
    pub fn new(config: PipelineConfig, store: Arc<Store>, embedder: Arc<dyn Embedder>) -> Result<Self, StoreError> {
        let data = ServiceData::load(&store)?;
        Ok(Self {
            config,
            store,
            embedder,
            data: RwLock::new(Arc::new(data)),
        })
    }

    /// The current snapshot. Requests hold it for their whole lifetime.
    pub fn snapshot(&self) -> Arc<ServiceData> {
        self.data.read().unwrap().clone()
    }

    /// Re-read the store and publish the result atomically.
    pub fn reload(&self) -> Result<(), StoreError> {
        let fresh = Arc::new(ServiceData::load(&self.store)?);
        *self.data.write().unwrap() = fresh;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default = "default_k")]
    pub k: i64,
    #[serde(default)]
    pub filters: SearchFilters,
}

fn default_k() -> i64 {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub stmt_id: String,
    pub score: f64,
    pub label: Option<String>,
    pub kind: StatementKind,
    pub doc_id: String,
    pub year: u32,
    pub journal: Option<String>,
    pub snippet: String,
    pub unfolded_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub schema: String,
    pub hits: Vec<SearchHit>,
    pub k: usize,
    /// Set when the requested k was outside [0, 100].
    pub clamped: bool,
    pub took_ms: u64,
}

async fn search(State(state): State<Arc<AppState>>, body: Result<Json<SearchRequest>, JsonRejection>) -> Response {
    let started = Instant::now();
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let k = req.k.clamp(0, MAX_K);
    let clamped = k != req.k;
    if k > 0 && req.query.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "query must be non-empty when k > 0");
    }
    let data = state.snapshot();
    let Some(index) = data.index.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "index not built");
    };
    let query = Query {
        text: req.query,
        k: k as usize,
        filters: req.filters,
    };
    let embedder = state.embedder.clone();
    let instruction = state.config.instruction.clone();
    let result = tokio::task::spawn_blocking(move || search_with(&index, embedder.as_ref(), &instruction, &query)).await;
    let result = match result {
        Ok(Ok(r)) => r,
        Ok(Err(e @ PipelineError::Index(_))) => return error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
        Ok(Err(e @ PipelineError::Embed(_))) => return error(StatusCode::BAD_GATEWAY, e.to_string()),
        Ok(Err(e)) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let hits = result
        .hits
        .into_iter()
        .map(|h| {
            let detail = data.statements.get(&h.stmt_id);
            SearchHit {
                snippet: detail
                    .map(|d| matlas_core::text::truncate_chars(&d.statement.content, SNIPPET_CHARS).0.to_string())
                    .unwrap_or_default(),
                unfolded_text: detail.and_then(|d| d.unfolded.as_ref()).map(|u| u.unfolded_text.clone()),
                stmt_id: h.stmt_id,
                score: h.score,
                label: h.payload.label,
                kind: h.payload.kind,
                doc_id: h.payload.doc_id,
                year: h.payload.year,
                journal: h.payload.journal_id,
            }
        })
        .collect();
    Json(SearchResponse {
        schema: "search/v1".into(),
        hits,
        k: k as usize,
        clamped,
        took_ms: started.elapsed().as_millis() as u64,
    })
    .into_response()
}

async fn statement(State(state): State<Arc<AppState>>, Path(stmt_id): Path<String>) -> Response {
    match state.snapshot().statements.get(&stmt_id) {
        Some(detail) => Json(detail).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown statement {stmt_id:?}")),
    }
}

async fn document_graph(State(state): State<Arc<AppState>>, Path(doc_id): Path<String>) -> Response {
    match state.snapshot().graphs.get(&doc_id) {
        Some(g) => Json(g).into_response(),
        None if state.store.contains(&doc_id) => {
            error(StatusCode::NOT_FOUND, format!("graph for {doc_id:?} not built"))
        }
        None => error(StatusCode::NOT_FOUND, format!("unknown document {doc_id:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_size: usize,
    pub docs: usize,
    pub statements: usize,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    let data = state.snapshot();
    Json(Health {
        status: "ok".into(),
        index_size: data.index.as_ref().map_or(0, |i| i.len()),
        docs: data.documents,
        statements: data.statements.len(),
    })
}

async fn config(State(state): State<Arc<AppState>>) -> Json<PipelineConfig> {
    Json(state.config.clone())
}

async fn reload(State(state): State<Arc<AppState>>) -> Response {
    let s = state.clone();
    match tokio::task::spawn_blocking(move || s.reload()).await {
        Ok(Ok(())) => healthz(State(state)).await.into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match state.config.ui_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => CorsLayer::new().allow_origin(origin),
        _ => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/config", get(config))
        .route("/v1/search", post(search))
        .route("/v1/statements/{stmt_id}", get(statement))
        .route("/v1/documents/{doc_id}/graph", get(document_graph))
        .route("/v1/reload", post(reload));
    if let Some(dir) = &state.config.ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors).with_state(state)
}

/// Bind address: the environment variable wins over the config.
pub fn bind_addr(config: &PipelineConfig) -> Result<SocketAddr, ServiceError> {
    let raw = std::env::var(BIND_ENV).unwrap_or_else(|_| config.bind.clone());
    raw.parse().map_err(|_| ServiceError::BadAddr(raw))
}

/// Serve until ctrl-c.
pub async fn serve(config: PipelineConfig) -> Result<(), ServiceError> {
    let addr = bind_addr(&config)?;
    let store = Arc::new(Store::open(&config.store)?);
    let embedder = config.embedder()?;
    let state = Arc::new(AppState::new(config, store, embedder)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })
}
