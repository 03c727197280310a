//! HTTP service: live sessions with a human creditor, the record list and
//! background benchmark runs.

pub mod error;
pub mod runs;
pub mod sessions;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use dcn_agents::{AgentSpec, TemplateStore};
use dcn_core::domain::DebtRecord;
use dcn_core::engine::EngineConfig;
use dcn_core::metrics::MetricWeights;
use dcn_core::projection::ProjectionConfig;
use dcn_llm::LlmClient;
use dcn_pipeline::{load_records, template_store, LlmSettings, PipelineError};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{ApiError, ApiResult};
pub use runs::{RunHandle, RunState};
pub use sessions::LiveSession;
pub use store::{Event, EventStore};

fn default_addr() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_debtor() -> AgentSpec {
    AgentSpec::Llm { template: "debtor_standard".into() }
}

fn default_max_runs() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_addr")]
    pub addr: SocketAddr,
    pub dataset: PathBuf,
    /// Session event logs and run outputs; nothing is persisted when unset.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub metrics: MetricWeights,
    #[serde(default)]
    pub llm: LlmSettings,
    #[serde(default = "default_debtor")]
    pub default_debtor: AgentSpec,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Benchmark runs executing at once; further runs queue.
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
    /// Empty means any origin.
    #[serde(default)]
    pub cors_origins: Vec<String>,
}

impl ServerConfig {
    pub fn new(dataset: PathBuf) -> Self {
        ServerConfig {
            addr: default_addr(),
            dataset,
            data_dir: None,
            engine: EngineConfig::default(),
            projection: ProjectionConfig::default(),
            metrics: MetricWeights::default(),
            llm: LlmSettings::default(),
            default_debtor: default_debtor(),
            templates_dir: None,
            max_runs: default_max_runs(),
            cors_origins: vec![],
        }
    }

    /// Reads a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: ServerConfig = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.data_dir = cfg.data_dir.map(|d| base.join(d));
        cfg.templates_dir = cfg.templates_dir.map(|d| base.join(d));
        cfg.llm.resolve(base);
        Ok(cfg)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub struct AppState {
    pub config: ServerConfig,
    pub records: BTreeMap<String, DebtRecord>,
    pub templates: TemplateStore,
    /// Shared by every LLM-backed debtor.
    pub client: Option<Arc<LlmClient>>,
    pub sessions: RwLock<HashMap<String, Arc<LiveSession>>>,
    pub runs: RwLock<HashMap<String, Arc<RunHandle>>>,
    pub store: EventStore,
    pub run_slots: Arc<tokio::sync::Semaphore>,
}

impl AppState {
    /// Builds the client from `config.llm` unless one is given.
    pub fn new(config: ServerConfig, client: Option<Arc<LlmClient>>) -> Result<Self, PipelineError> {
        config.engine.validate().map_err(PipelineError::Config)?;
        let records = load_records(&config.dataset)?.into_iter().map(|r| (r.record_id().to_string(), r)).collect();
        let templates = template_store(config.templates_dir.as_deref())?;
        let client = match client {
            Some(c) => Some(c),
            None => Some(config.llm.build_client()?),
        };
        let store = EventStore::new(config.data_dir.as_ref().map(|d| d.join("sessions")))
            .map_err(|e| PipelineError::Config(format!("session store: {e}")))?;
        let run_slots = Arc::new(tokio::sync::Semaphore::new(config.max_runs.max(1)));
        let state = AppState {
            config,
            records,
            templates,
            client,
            sessions: RwLock::default(),
            runs: RwLock::default(),
            store,
            run_slots,
        };
        let logs = state.store.load_all().map_err(|e| PipelineError::Config(format!("session store: {e}")))?;
        let restored: Vec<_> = logs.into_iter().filter_map(|(id, events)| sessions::restore(&state, &id, events)).collect();
        if !restored.is_empty() {
            tracing::info!(sessions = restored.len(), "restored sessions from the event log");
        }
        state.sessions.write().extend(restored.into_iter().map(|s| (s.id.clone(), Arc::new(s))));
        Ok(state)
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "records": state.records.len(),
        "sessions": state.sessions.read().len(),
        "runs": state.runs.read().len(),
    }))
}

async fn records(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!(state.records.values().map(sessions::public_card).collect::<Vec<_>>()))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors(&state.config.cors_origins);
    Router::new()
        .route("/health", get(health))
        .route("/records", get(records))
        .route("/sessions", post(sessions::create_session).get(sessions::list_sessions))
        .route("/sessions/{id}", get(sessions::get_session))
        .route("/sessions/{id}/turns", post(sessions::post_turn))
        .route("/sessions/{id}/report", get(sessions::report))
        .route("/sessions/{id}/trajectory.csv", get(sessions::trajectory_csv))
        .route("/runs", post(runs::create_run).get(runs::list_runs))
        .route("/runs/{id}", get(runs::get_run))
        .route("/runs/{id}/cancel", post(runs::cancel_run))
        .fallback(fallback)
        .layer(cors)
        .with_state(state)
}

/// Binds `config.addr` and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let addr = config.addr;
    let state = Arc::new(AppState::new(config, None)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, records = state.records.len(), "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
