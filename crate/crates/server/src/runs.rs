//! Background benchmark runs.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use dcn_core::metrics::MetricsReport;
use dcn_pipeline::{run_benchmark, FailureInfo, RunHooks, RunSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::{now_ms, AppState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, Default)]
struct Outcome {
    report: Option<MetricsReport>,
    failures: Vec<FailureInfo>,
    error: Option<String>,
}

pub struct RunHandle {
    pub id: String,
    pub spec: RunSpec,
    pub created_ms: u64,
    state: parking_lot::Mutex<RunState>,
    completed: AtomicUsize,
    total: AtomicUsize,
    cancel: AtomicBool,
    outcome: parking_lot::Mutex<Outcome>,
}

impl RunHandle {
    fn new(id: String, spec: RunSpec) -> Self {
        RunHandle {
            id,
            spec,
            created_ms: now_ms(),
            state: parking_lot::Mutex::new(RunState::Queued),
            completed: AtomicUsize::new(0),
            total: AtomicUsize::new(0),
            cancel: AtomicBool::new(false),
            outcome: parking_lot::Mutex::default(),
        }
    }

    pub fn state(&self) -> RunState {
        *self.state.lock()
    }

    pub fn view(&self) -> Value {
        let o = self.outcome.lock();
        json!({
            "run_id": self.id,
            "label": self.spec.label,
            "state": self.state(),
            "completed": self.completed.load(Ordering::Relaxed),
            "total": self.total.load(Ordering::Relaxed),
            "out": self.spec.out,
            "report": o.report,
            "failures": o.failures,
            "error": o.error,
            "created_ms": self.created_ms,
        })
    }

    fn execute(&self) {
        {
            let mut s = self.state.lock();
            if *s == RunState::Cancelled {
                return;
            }
            *s = RunState::Running;
        }
        let progress = |done: usize, total: usize| {
            self.completed.store(done, Ordering::Relaxed);
            self.total.store(total, Ordering::Relaxed);
        };
        let result = run_benchmark(&self.spec, RunHooks { progress: Some(&progress), cancel: Some(&self.cancel) });
        let mut o = self.outcome.lock();
        let mut s = self.state.lock();
        match result {
            Ok(out) if out.cancelled => *s = RunState::Cancelled,
            Ok(out) => {
                o.report = out.report;
                o.failures = out.failures;
                *s = RunState::Done;
            }
            Err(e) => {
                tracing::warn!(run = %self.id, error = %e, "run failed");
                o.error = Some(e.to_string());
                *s = RunState::Failed;
            }
        }
    }
}

/// The body is a run spec. `dataset` defaults to the server's records and
/// `out` to a directory under the server's data dir.
fn spec_from_body(state: &AppState, id: &str, body: &Bytes) -> ApiResult<RunSpec> {
    let mut v: Value = if body.is_empty() {
        json!({})
    } else {
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid run spec: {e}")))?
    };
    let obj = v.as_object_mut().ok_or_else(|| ApiError::bad_request("run spec must be an object"))?;
    obj.entry("dataset").or_insert_with(|| json!(state.config.dataset));
    if !obj.contains_key("out") {
        let dir = state.config.data_dir.clone().unwrap_or_else(std::env::temp_dir).join("runs").join(id);
        obj.insert("out".into(), json!(dir));
    }
    let spec: RunSpec = serde_json::from_value(v).map_err(|e| ApiError::bad_request(format!("invalid run spec: {e}")))?;
    spec.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(spec)
}

pub async fn create_run(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let spec = spec_from_body(&state, &id, &body)?;
    let handle = Arc::new(RunHandle::new(id.clone(), spec));
    state.runs.write().insert(id.clone(), handle.clone());
    let slots = state.run_slots.clone();
    let worker = handle.clone();
    tokio::spawn(async move {
        let Ok(_permit) = slots.acquire_owned().await else { return };
        if let Err(e) = tokio::task::spawn_blocking(move || worker.execute()).await {
            tracing::error!(error = %e, "run worker panicked");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(handle.view())))
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<RunHandle>> {
    state.runs.read().get(id).cloned().ok_or_else(|| ApiError::not_found("run", id))
}

pub async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(lookup(&state, &id)?.view()))
}

pub async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Value> {
    let mut runs: Vec<Arc<RunHandle>> = state.runs.read().values().cloned().collect();
    runs.sort_by(|a, b| (a.created_ms, &a.id).cmp(&(b.created_ms, &b.id)));
    Json(json!(runs
        .iter()
        .map(|r| json!({"run_id": r.id, "label": r.spec.label, "state": r.state(), "created_ms": r.created_ms}))
        .collect::<Vec<_>>()))
}

pub async fn cancel_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let run = lookup(&state, &id)?;
    {
        let mut s = run.state.lock();
        match *s {
            RunState::Done | RunState::Failed => {
                return Err(ApiError::conflict("wrong_state", format!("run already {}", json!(*s).as_str().unwrap_or(""))));
            }
            RunState::Queued => *s = RunState::Cancelled,
            RunState::Running | RunState::Cancelled => {}
        }
        run.cancel.store(true, Ordering::Relaxed);
    }
    // A running worker notices the flag between sessions.
    let mut view = run.view();
    view["state"] = json!(RunState::Cancelled);
    Ok(Json(view))
}
