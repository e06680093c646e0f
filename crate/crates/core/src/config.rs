//! Pipeline configuration, loaded from a single TOML or JSON file, and the
//! factories that turn it into concrete components.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::{ClientError, ConcurrencyLimit, HttpCompletionClient, Limited, RetryPolicy};
use crate::embed::{EmbedError, Embedder, HashingEmbedder, HttpEmbedder, DEFAULT_DIMENSION};
use crate::graph::{ConcatExpander, Expander, ModelExpander, DEFAULT_BUDGET};
use crate::index::DEFAULT_INSTRUCTION;
use crate::locator::{
    HeuristicProvider, LocateOptions, ModelPatternProvider, PatternProvider, WithFallback, DEFAULT_MATCH_BUDGET,
    DEFAULT_SPAN_CAP,
};
use crate::structurer::{
    ExtractOptions, MockStructurer, ModelStructurer, StructureOptions, StructurerClient, WindowOptions,
    DEFAULT_BATCH_SIZE, DEFAULT_OVERLAP, DEFAULT_WINDOW_LENGTH,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Heuristic,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Mock,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpanderKind {
    #[default]
    Concat,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Test,
    Service,
}

macro_rules! parse_kind {
    ($($t:ty => [$($s:literal => $v:expr),+]),+ $(,)?) => {$(
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(format!("unknown value {other:?}")),
                }
            }
        }
    )+};
}

parse_kind! {
    ProviderKind => ["heuristic" => ProviderKind::Heuristic, "model" => ProviderKind::Model],
    ClientKind => ["mock" => ClientKind::Mock, "model" => ClientKind::Model],
    ExpanderKind => ["concat" => ExpanderKind::Concat, "model" => ExpanderKind::Model],
    EmbedderKind => ["test" => EmbedderKind::Test, "service" => EmbedderKind::Service],
}

/// Chat-completion endpoint used by the model-backed provider, structurer
/// and expander.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub kind: ClientKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            kind: ClientKind::Mock,
            endpoint: None,
            model: "deepseek-chat".into(),
            api_key_env: Some("MATLAS_LLM_API_KEY".into()),
            timeout_secs: 120,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Test,
            dimension: DEFAULT_DIMENSION,
            endpoint: None,
            model: "Qwen/Qwen3-Embedding-8B".into(),
            api_key_env: Some("MATLAS_EMBED_API_KEY".into()),
            batch_size: 32,
            timeout_secs: 60,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcurrencyCaps {
    /// Completion requests in flight across all documents.
    pub llm_in_flight: usize,
    /// Documents processed in parallel.
    pub documents: usize,
}

impl Default for ConcurrencyCaps {
    fn default() -> Self {
        Self {
            llm_in_flight: 8,
            documents: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub batch_size: usize,
    pub window_length: usize,
    pub overlap: usize,
    pub back_margin: usize,
    pub span_cap: usize,
    pub match_budget: u64,
    /// Unfolded text budget in chars.
    pub budget: usize,
    pub instruction: String,
    pub structure_retries: u32,
    pub provider: ProviderKind,
    pub expander: ExpanderKind,
    pub client: ClientConfig,
    pub embedder: EmbedderConfig,
    pub caps: ConcurrencyCaps,
    pub store: PathBuf,
    pub bind: String,
    pub ui_origin: Option<String>,
    pub ui_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            window_length: DEFAULT_WINDOW_LENGTH,
            overlap: DEFAULT_OVERLAP,
            back_margin: 0,
            span_cap: DEFAULT_SPAN_CAP,
            match_budget: DEFAULT_MATCH_BUDGET,
            budget: DEFAULT_BUDGET,
            instruction: DEFAULT_INSTRUCTION.into(),
            structure_retries: StructureOptions::default().max_retries,
            provider: ProviderKind::Heuristic,
            expander: ExpanderKind::Concat,
            client: ClientConfig::default(),
            embedder: EmbedderConfig::default(),
            caps: ConcurrencyCaps::default(),
            store: PathBuf::from("matlas-store"),
            bind: "127.0.0.1:8080".into(),
            ui_origin: None,
            ui_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Load from `path`; `.json` files are read as JSON, anything else as
    /// TOML. Missing fields take their defaults.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let config: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.overlap >= self.batch_size {
            return fail("overlap must be smaller than batch_size");
        }
        if self.window_length == 0 || self.span_cap == 0 {
            return fail("window_length and span_cap must be positive");
        }
        if self.embedder.dimension == 0 {
            return fail("embedder.dimension must be positive");
        }
        if self.caps.llm_in_flight == 0 || self.caps.documents == 0 {
            return fail("concurrency caps must be positive");
        }
        Ok(())
    }

    pub fn locate_options(&self) -> LocateOptions {
        LocateOptions {
            span_cap: self.span_cap,
            match_budget: self.match_budget,
        }
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            batch_size: self.batch_size,
            overlap: self.overlap,
            window: WindowOptions {
                window_length: self.window_length,
                back_margin: self.back_margin,
            },
            structure: StructureOptions {
                max_retries: self.structure_retries,
            },
        }
    }

    fn completion_client(&self, limit: &Arc<ConcurrencyLimit>) -> Result<Limited<HttpCompletionClient>, ConfigError> {
        let endpoint = self
            .client
            .endpoint
            .clone()
            .ok_or_else(|| ConfigError::Invalid("client.endpoint is required for the model client".into()))?;
        let api_key = self.client.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        let retry = RetryPolicy {
            max_attempts: self.client.max_attempts,
            ..RetryPolicy::default()
        };
        let http = HttpCompletionClient::new(
            endpoint,
            self.client.model.clone(),
            api_key,
            retry,
            Duration::from_secs(self.client.timeout_secs),
        )?;
        Ok(Limited::new(http, limit.clone()))
    }

    /// Build the configured components. Model-backed components share one
    /// in-flight cap.
    pub fn components(&self) -> Result<Components, ConfigError> {
        self.validate()?;
        let limit = Arc::new(ConcurrencyLimit::new(self.caps.llm_in_flight));
        let provider: Arc<dyn PatternProvider> = match self.provider {
            ProviderKind::Heuristic => Arc::new(HeuristicProvider),
            ProviderKind::Model => Arc::new(WithFallback {
                primary: ModelPatternProvider::new(self.completion_client(&limit)?),
                fallback: HeuristicProvider,
            }),
        };
        let structurer: Arc<dyn StructurerClient> = match self.client.kind {
            ClientKind::Mock => Arc::new(MockStructurer),
            ClientKind::Model => Arc::new(ModelStructurer::new(self.completion_client(&limit)?)),
        };
        let expander: Arc<dyn Expander> = match self.expander {
            ExpanderKind::Concat => Arc::new(ConcatExpander),
            ExpanderKind::Model => Arc::new(ModelExpander::new(self.completion_client(&limit)?)),
        };
        Ok(Components {
            provider,
            structurer,
            expander,
            embedder: self.embedder()?,
        })
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        let e = &self.embedder;
        Ok(match e.kind {
            EmbedderKind::Test => Arc::new(HashingEmbedder::new(e.dimension)),
            EmbedderKind::Service => {
                let endpoint = e
                    .endpoint
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("embedder.endpoint is required for the service embedder".into()))?;
                let retry = RetryPolicy {
                    max_attempts: e.max_attempts,
                    ..RetryPolicy::default()
                };
                let embedder = HttpEmbedder::new(
                    endpoint,
                    e.model.clone(),
                    e.dimension,
                    e.batch_size,
                    retry,
                    Duration::from_secs(e.timeout_secs),
                )?
                .with_api_key(e.api_key_env.as_deref().and_then(|v| std::env::var(v).ok()));
                Arc::new(embedder)
            }
        })
    }
}

/// The pluggable pieces of the pipeline.
#[derive(Clone)]
pub struct Components {
    pub provider: Arc<dyn PatternProvider>,
    pub structurer: Arc<dyn StructurerClient>,
    pub expander: Arc<dyn Expander>,
    pub embedder: Arc<dyn Embedder>,
}

impl Components {
    /// Heuristic patterns, rule-based structurer, concatenation and the
    /// hashing embedder: fully offline and deterministic.
    pub fn offline(dimension: usize) -> Self {
        Self {
            provider: Arc::new(HeuristicProvider),
            structurer: Arc::new(MockStructurer),
            expander: Arc::new(ConcatExpander),
            embedder: Arc::new(HashingEmbedder::new(dimension)),
        }
    }
}
