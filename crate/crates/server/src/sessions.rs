//! Live sessions: a human (or client program) plays the creditor against a
//! server-side debtor agent.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use dcn_agents::AgentSpec;
use dcn_core::domain::{grid_of, DebtRecord, DimensionKey, Side, TurnRecord};
use dcn_core::engine::{committed_json, parse_actions, Agent, FailureKind, Phase, Session, SidecarEntry, TurnError};
use dcn_core::metrics::evaluate_sample;
use rand::seq::IteratorRandom;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::error::{ApiError, ApiResult};
use crate::store::Event;
use crate::{now_ms, AppState};

pub struct Inner {
    pub session: Session,
    pub debtor: Box<dyn Agent>,
    pub sidecar: Vec<SidecarEntry>,
    pub updated_ms: u64,
}

pub struct LiveSession {
    pub id: String,
    pub record: DebtRecord,
    pub debtor_spec: AgentSpec,
    pub created_ms: u64,
    pub inner: Arc<Mutex<Inner>>,
    /// Public view, refreshed after every change, readable while a turn is
    /// being processed.
    pub view: parking_lot::Mutex<Value>,
}

pub fn status(session: &Session) -> &'static str {
    match session.state().phase() {
        Phase::AwaitingCreditor => "awaiting_creditor",
        Phase::AwaitingDebtor => "awaiting_debtor",
        Phase::Finished(_) => "done",
    }
}

pub fn public_card(record: &DebtRecord) -> Value {
    let b = record.basic();
    json!({
        "record_id": b.record_id,
        "name": b.name,
        "sex": b.sex,
        "amount": b.amount,
        "amount_display": b.amount.to_string(),
        "overdue_days": b.overdue_days,
    })
}

pub fn grids() -> Value {
    DimensionKey::ALL
        .iter()
        .map(|k| {
            let values: Vec<Value> = grid_of(*k).iter().map(|v| v.to_json()).collect();
            (k.as_str().to_string(), json!({"label": k.label(), "values": values}))
        })
        .collect::<serde_json::Map<_, _>>()
        .into()
}

/// A turn as the creditor may see it: the debtor's thought is withheld.
fn visible_turn(t: &TurnRecord) -> Value {
    let mut v = json!({"side": t.side, "round": t.round, "dialogue": t.dialogue, "actions": t.actions});
    if t.side == Side::Creditor && !t.thought.is_empty() {
        v["thought"] = json!(t.thought);
    }
    v
}

impl LiveSession {
    pub fn new(id: String, record: DebtRecord, debtor_spec: AgentSpec, created_ms: u64, inner: Inner) -> Self {
        let view = Self::render_view(&id, &record, &inner);
        LiveSession { id, record, debtor_spec, created_ms, inner: Arc::new(Mutex::new(inner)), view: parking_lot::Mutex::new(view) }
    }

    fn render_view(id: &str, record: &DebtRecord, inner: &Inner) -> Value {
        let s = &inner.session;
        json!({
            "session_id": id,
            "status": status(s),
            "round": s.state().round(),
            "max_rounds": s.state().config().max_rounds,
            "card": public_card(record),
            "committed": committed_json(s.state().committed()),
            "turns": s.state().turns().iter().map(visible_turn).collect::<Vec<_>>(),
            "updated_ms": inner.updated_ms,
        })
    }

    fn refresh(&self, inner: &Inner) {
        *self.view.lock() = Self::render_view(&self.id, &self.record, inner);
    }

    fn set_status(&self, s: &str) {
        self.view.lock()["status"] = json!(s);
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    let body = if body.is_empty() { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Deserialize, Default)]
struct CreateSession {
    record_id: Option<String>,
    #[serde(default)]
    random: bool,
    debtor_agent: Option<AgentSpec>,
}

pub fn build_debtor(state: &AppState, spec: &AgentSpec) -> ApiResult<Box<dyn Agent>> {
    spec.build(Side::Debtor, state.client.as_ref(), &state.templates)
        .map_err(|e| ApiError::bad_request(format!("debtor agent: {e}")).with_detail(json!({"agent": spec})))
}

pub async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = parse_body(&body)?;
    let record = match (&req.record_id, req.random) {
        (Some(id), _) => state.records.get(id).cloned().ok_or_else(|| ApiError::not_found("record", id))?,
        (None, _) => state
            .records
            .values()
            .choose(&mut rand::rng())
            .cloned()
            .ok_or_else(|| ApiError::conflict("no_records", "the server has no records loaded"))?,
    };
    let spec = req.debtor_agent.unwrap_or_else(|| state.config.default_debtor.clone());
    let debtor = build_debtor(&state, &spec)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let now = now_ms();
    state
        .store
        .append(&id, &[Event::Created { record_id: record.record_id().to_string(), debtor: spec.clone(), at_ms: now }])
        .map_err(|e| ApiError::internal(format!("event log: {e}")))?;
    let inner = Inner { session: Session::new(id.clone(), record.clone(), state.config.engine.clone()), debtor, sidecar: vec![], updated_ms: now };
    let live = Arc::new(LiveSession::new(id.clone(), record.clone(), spec, now, inner));
    state.sessions.write().insert(id.clone(), live);
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": id,
            "status": "awaiting_creditor",
            "round": 1,
            "max_rounds": state.config.engine.max_rounds,
            "card": public_card(&record),
            "grids": grids(),
        })),
    ))
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<LiveSession>> {
    state.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
}

pub async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = lookup(&state, &id)?;
    let view = live.view.lock().clone();
    Ok(Json(view))
}

pub async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Value> {
    let mut rows: Vec<Value> = state
        .sessions
        .read()
        .values()
        .map(|s| {
            let v = s.view.lock();
            json!({"session_id": s.id, "record_id": s.record.record_id(), "status": v["status"], "round": v["round"], "created_ms": s.created_ms})
        })
        .collect();
    rows.sort_by_key(|r| (r["created_ms"].as_u64(), r["session_id"].as_str().map(String::from)));
    Json(json!(rows))
}

#[derive(Deserialize)]
struct TurnBody {
    #[serde(default)]
    thought: String,
    #[serde(default)]
    dialogue: String,
    #[serde(default)]
    actions: Value,
}

fn turn_error(e: TurnError) -> ApiError {
    match e {
        TurnError::Violation(v) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_action", v.to_string())
            .with_detail(json!({"violation": v.to_string()})),
        other => ApiError::conflict("wrong_state", other.to_string()),
    }
}

pub async fn post_turn(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let live = lookup(&state, &id)?;
    let body: TurnBody = parse_body(&body)?;
    let actions = match &body.actions {
        Value::Null => vec![],
        v => parse_actions(&v.to_string()).map_err(|e| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_action", e.to_string()).with_detail(json!({"location": e.location}))
        })?,
    };
    let mut guard = live
        .inner
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::conflict("busy", "another turn for this session is being processed"))?;
    let session = &guard.session;
    if session.state().awaiting() != Some(Side::Creditor) {
        return Err(ApiError::conflict("wrong_state", format!("session is {}", status(session))));
    }
    let turn = TurnRecord { side: Side::Creditor, round: session.state().round(), thought: body.thought, dialogue: body.dialogue, actions };
    session.state().check_turn(&turn).map_err(turn_error)?;

    live.set_status("awaiting_debtor");
    let timeout = state.config.engine.turn_timeout();
    let work = tokio::task::spawn_blocking(move || {
        // Work on a copy so nothing changes unless the debtor answers.
        let mut trial = guard.session.clone();
        let result = trial.state_mut().apply_turn(turn.clone()).map_err(FailureKind::Turn).and_then(|_| {
            let mut notes = Vec::new();
            if trial.state().awaiting() == Some(Side::Debtor) {
                trial.step(guard.debtor.as_mut(), &mut notes)?;
            }
            Ok(notes)
        });
        (guard, trial, turn, result)
    });
    let (mut guard, trial, turn, result) = match tokio::time::timeout(timeout, work).await {
        Ok(joined) => joined.map_err(|e| ApiError::internal(e.to_string()))?,
        Err(_) => {
            live.set_status("awaiting_creditor");
            return Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "debtor_timeout", "the debtor agent did not answer in time")
                .with_detail(json!({"timeout_secs": timeout.as_secs()})));
        }
    };
    let notes = match result {
        Ok(n) => n,
        Err(e) => {
            live.refresh(&guard);
            return Err(match e {
                FailureKind::Timeout(d) => ApiError::new(StatusCode::GATEWAY_TIMEOUT, "debtor_timeout", e.to_string())
                    .with_detail(json!({"elapsed_ms": d.as_millis() as u64})),
                FailureKind::Turn(t) => turn_error(t),
                FailureKind::Agent(a) => ApiError::new(StatusCode::BAD_GATEWAY, "debtor_failed", a.to_string()),
            });
        }
    };

    let now = now_ms();
    let mut events = vec![Event::Turn { turn, at_ms: now }];
    let debtor_turn = trial.state().turns().last().filter(|t| t.side == Side::Debtor).cloned();
    if let Some(t) = &debtor_turn {
        events.push(Event::Turn { turn: t.clone(), at_ms: now });
    }
    events.extend(notes.iter().cloned().map(|entry| Event::Note { entry }));
    state.store.append(&id, &events).map_err(|e| ApiError::internal(format!("event log: {e}")))?;
    guard.session = trial;
    guard.sidecar.extend(notes);
    guard.updated_ms = now;
    live.refresh(&guard);
    let s = &guard.session;
    Ok(Json(json!({
        "debtor_turn": debtor_turn.map(|t| json!({"round": t.round, "dialogue": t.dialogue, "actions": t.actions})),
        "committed": committed_json(s.state().committed()),
        "status": status(s),
        "round": s.state().round(),
    })))
}

async fn finished(state: &AppState, live: &LiveSession, force: bool) -> ApiResult<tokio::sync::OwnedMutexGuard<Inner>> {
    let mut guard = live.inner.clone().try_lock_owned().map_err(|_| ApiError::conflict("busy", "a turn is being processed"))?;
    if !guard.session.state().is_finished() {
        if !force {
            return Err(ApiError::conflict("not_finished", "the session is still running; pass ?final=force to close it"));
        }
        state.store.append(&live.id, &[Event::Closed { at_ms: now_ms() }]).map_err(|e| ApiError::internal(e.to_string()))?;
        guard.session.state_mut().close();
        guard.updated_ms = now_ms();
        live.refresh(&guard);
    }
    Ok(guard)
}

fn forced(q: &HashMap<String, String>) -> bool {
    q.get("final").is_some_and(|v| v == "force")
}

pub async fn report(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let live = lookup(&state, &id)?;
    let guard = finished(&state, &live, forced(&q)).await?;
    let transcript = guard.session.transcript();
    let eval = evaluate_sample(&transcript, &live.record, &state.config.projection, &state.config.metrics)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let indices = eval.metrics.indices(&state.config.metrics);
    Ok(Json(json!({
        "session_id": id,
        "status": "done",
        "record": live.record,
        "transcript": transcript,
        "outcome": transcript.outcome,
        "schedule": eval.schedule,
        "metrics": eval.metrics,
        "indices": indices,
        "trajectory": eval.trajectory,
        "trajectory_csv": format!("/sessions/{id}/trajectory.csv"),
        "warnings": guard.session.state().warnings(),
        "sidecar": guard.sidecar,
    })))
}

pub async fn trajectory_csv(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let live = lookup(&state, &id)?;
    let guard = finished(&state, &live, false).await?;
    let eval = evaluate_sample(&guard.session.transcript(), &live.record, &state.config.projection, &state.config.metrics)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut buf = Vec::new();
    dcn_pipeline::write_trajectory_csv(&mut buf, &eval.trajectory).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], buf))
}

/// Rebuilds a session from its event log.
pub fn restore(state: &AppState, id: &str, events: Vec<Event>) -> Option<LiveSession> {
    let mut it = events.into_iter();
    let Some(Event::Created { record_id, debtor, at_ms }) = it.next() else {
        tracing::warn!(session = id, "event log does not start with creation; skipped");
        return None;
    };
    let record = state.records.get(&record_id).cloned().or_else(|| {
        tracing::warn!(session = id, record = %record_id, "record no longer loaded; session skipped");
        None
    })?;
    let agent = build_debtor(state, &debtor).ok()?;
    let mut inner = Inner { session: Session::new(id, record.clone(), state.config.engine.clone()), debtor: agent, sidecar: vec![], updated_ms: at_ms };
    for e in it {
        match e {
            Event::Turn { turn, at_ms } => {
                if let Err(err) = inner.session.state_mut().apply_turn(turn) {
                    tracing::warn!(session = id, error = %err, "stored turn does not apply; log truncated here");
                    break;
                }
                inner.updated_ms = at_ms;
            }
            Event::Note { entry } => inner.sidecar.push(entry),
            Event::Closed { at_ms } => {
                inner.session.state_mut().close();
                inner.updated_ms = at_ms;
            }
            Event::Created { .. } => {}
        }
    }
    Some(LiveSession::new(id.to_string(), record, debtor, at_ms, inner))
}
