//! The round-based negotiation protocol.
//!
//! Each round the creditor speaks first and the debtor answers. Only debtor
//! `accept` actions write into the result dictionary; once it covers all four
//! dimensions the session ends in agreement, otherwise it stops after
//! `max_rounds` rounds with no outcome.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{
    validate_actions, Action, ActionKind, ActionViolation, BasicInfo, DebtRecord, DimensionKey, DimensionValue,
    NegotiationOutcome, PrivateInfo, Side, TerminationReason, Transcript, TurnRecord,
};

pub type Committed = BTreeMap<DimensionKey, DimensionValue>;

/// `{"disc_ratio": 0.1, ...}` for whatever has been committed so far.
pub fn committed_json(committed: &Committed) -> Value {
    Value::Object(committed.iter().map(|(k, v)| (k.as_str().to_string(), v.to_json())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub max_rounds: u32,
    pub strict_grid: bool,
    pub turn_timeout_secs: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { max_rounds: 10, strict_grid: true, turn_timeout_secs: 120 }
    }
}

impl EngineConfig {
    pub fn turn_timeout(&self) -> Duration {
        Duration::from_secs(self.turn_timeout_secs)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds < 1 {
            return Err("max_rounds must be >= 1".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Action grammar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("action syntax error at {location}: {message}")]
pub struct ActionParseError {
    pub location: String,
    pub message: String,
}

/// Parses the JSON action array of an agent reply. Markdown code fences are
/// stripped; a lone object is read as a one-element list.
pub fn parse_actions(raw: &str) -> Result<Vec<Action>, ActionParseError> {
    let text = strip_fences(raw);
    if text.is_empty() {
        return Err(ActionParseError { location: "line 1, column 1".into(), message: "empty action block".into() });
    }
    let value: Value = serde_json::from_str(text).map_err(|e| ActionParseError {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        other => {
            return Err(ActionParseError {
                location: "line 1, column 1".into(),
                message: format!("expected a JSON array of actions, found {other}"),
            })
        }
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            serde_json::from_value::<Action>(item).map_err(|e| ActionParseError {
                location: format!("element {i}"),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Canonical action syntax; `parse_actions(&format_actions(a)) == a`.
pub fn format_actions(actions: &[Action]) -> String {
    serde_json::to_string(actions).expect("actions always serialize")
}

fn strip_fences(raw: &str) -> &str {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        text = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    text
}

// ---------------------------------------------------------------------------
// Agent contract
// ---------------------------------------------------------------------------

/// A past turn as seen by one side: the other side's thoughts are withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleTurn {
    pub side: Side,
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub dialogue: String,
    pub actions: Vec<Action>,
}

/// Everything an agent is given when asked to speak.
#[derive(Debug, Clone)]
pub struct TurnContext<'a> {
    pub session_id: &'a str,
    pub side: Side,
    pub round: u32,
    pub max_rounds: u32,
    pub basic: &'a BasicInfo,
    /// Present only for the debtor.
    pub private: Option<&'a PrivateInfo>,
    pub history: Vec<VisibleTurn>,
    pub committed: &'a Committed,
    /// Set when the previous attempt was rejected; explains why.
    pub feedback: Option<String>,
}

impl TurnContext<'_> {
    /// The opponent's most recent turn, if any.
    pub fn last_opponent_turn(&self) -> Option<&VisibleTurn> {
        self.history.iter().rev().find(|t| t.side != self.side)
    }
}

/// Side-channel text an agent wants logged but never shown to the opponent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentNote {
    pub stage: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AgentTurn {
    pub thought: String,
    pub dialogue: String,
    pub actions: Vec<Action>,
    pub notes: Vec<AgentNote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("llm call failed: {0}")]
    Llm(String),
    #[error("unparseable reply: {0}")]
    Unparseable(String),
    #[error("agent timed out after {0:?}")]
    Timeout(Duration),
    #[error("{0}")]
    Other(String),
}

pub trait Agent: Send {
    fn side(&self) -> Side;
    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError>;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn side(&self) -> Side {
        (**self).side()
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        (**self).generate(ctx)
    }
}

// ---------------------------------------------------------------------------
// Protocol state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingCreditor,
    AwaitingDebtor,
    Finished(TerminationReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolWarning {
    pub round: u32,
    pub dim: DimensionKey,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnError {
    #[error("session is finished")]
    Finished,
    #[error("expected a {expected} turn, got {got}")]
    WrongSide { expected: Side, got: Side },
    #[error("expected round {expected}, got {got}")]
    WrongRound { expected: u32, got: u32 },
    #[error(transparent)]
    Violation(#[from] ActionViolation),
}

/// Record-independent protocol state: the result dictionary and turn log.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationState {
    cfg: EngineConfig,
    committed: Committed,
    round: u32,
    phase: Phase,
    turns: Vec<TurnRecord>,
    last_proposals: HashMap<Side, BTreeMap<DimensionKey, DimensionValue>>,
    warnings: Vec<ProtocolWarning>,
}

impl NegotiationState {
    pub fn new(cfg: EngineConfig) -> Self {
        NegotiationState {
            cfg,
            committed: Committed::new(),
            round: 1,
            phase: Phase::AwaitingCreditor,
            turns: Vec::new(),
            last_proposals: HashMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn committed(&self) -> &Committed {
        &self.committed
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn turns(&self) -> &[TurnRecord] {
        &self.turns
    }

    pub fn warnings(&self) -> &[ProtocolWarning] {
        &self.warnings
    }

    /// Latest value each side asked for, per dimension.
    pub fn last_proposal(&self, side: Side, dim: DimensionKey) -> Option<DimensionValue> {
        self.last_proposals.get(&side).and_then(|m| m.get(&dim)).copied()
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Finished(_))
    }

    pub fn awaiting(&self) -> Option<Side> {
        match self.phase {
            Phase::AwaitingCreditor => Some(Side::Creditor),
            Phase::AwaitingDebtor => Some(Side::Debtor),
            Phase::Finished(_) => None,
        }
    }

    /// Checks a turn without applying it.
    pub fn check_turn(&self, turn: &TurnRecord) -> Result<(), TurnError> {
        let expected = self.awaiting().ok_or(TurnError::Finished)?;
        if turn.side != expected {
            return Err(TurnError::WrongSide { expected, got: turn.side });
        }
        if turn.round != self.round {
            return Err(TurnError::WrongRound { expected: self.round, got: turn.round });
        }
        validate_actions(&turn.actions, self.cfg.strict_grid)?;
        Ok(())
    }

    /// Applies a validated turn and returns the dimensions it committed.
    pub fn apply_turn(&mut self, turn: TurnRecord) -> Result<Vec<(DimensionKey, DimensionValue)>, TurnError> {
        self.check_turn(&turn)?;
        let mut commits = Vec::new();
        for action in &turn.actions {
            let Some(value) = action.value else { continue };
            match (turn.side, action.kind) {
                (side, ActionKind::Ask) => {
                    self.last_proposals.entry(side).or_default().insert(action.dim, value);
                }
                (Side::Debtor, ActionKind::Accept) => {
                    if let Some(existing) = self.committed.get(&action.dim) {
                        self.warnings.push(ProtocolWarning {
                            round: turn.round,
                            dim: action.dim,
                            message: format!("accept ignored: {} already committed at {existing}", action.dim),
                        });
                        continue;
                    }
                    if let Some(asked) = self.last_proposal(Side::Creditor, action.dim) {
                        if asked != value {
                            self.warnings.push(ProtocolWarning {
                                round: turn.round,
                                dim: action.dim,
                                message: format!("accepted {value} while the creditor last asked {asked}"),
                            });
                        }
                    }
                    self.committed.insert(action.dim, value);
                    commits.push((action.dim, value));
                }
                _ => {}
            }
        }
        let side = turn.side;
        self.turns.push(turn);
        self.phase = match side {
            Side::Creditor => Phase::AwaitingDebtor,
            Side::Debtor if self.covers_all() => Phase::Finished(TerminationReason::Agreement),
            Side::Debtor if self.round >= self.cfg.max_rounds => Phase::Finished(TerminationReason::MaxTurns),
            Side::Debtor => {
                self.round += 1;
                Phase::AwaitingCreditor
            }
        };
        Ok(commits)
    }

    /// Ends the session now without agreement.
    pub fn close(&mut self) {
        if !self.is_finished() {
            self.phase = Phase::Finished(TerminationReason::MaxTurns);
        }
    }

    fn covers_all(&self) -> bool {
        DimensionKey::ALL.iter().all(|k| self.committed.contains_key(k))
    }

    pub fn outcome(&self) -> Option<NegotiationOutcome> {
        match self.phase {
            Phase::Finished(TerminationReason::Agreement) => NegotiationOutcome::new(self.committed.clone()).ok(),
            _ => None,
        }
    }

    /// The transcript so far. Unfinished sessions report `max_turns` with no outcome.
    pub fn transcript(&self, record_id: &str) -> Transcript {
        let outcome = self.outcome();
        Transcript {
            record_id: record_id.to_string(),
            turns: self.turns.clone(),
            terminated_reason: if outcome.is_some() {
                TerminationReason::Agreement
            } else {
                TerminationReason::MaxTurns
            },
            outcome,
        }
    }

    /// History as one side sees it.
    pub fn visible_history(&self, viewer: Side) -> Vec<VisibleTurn> {
        self.turns
            .iter()
            .map(|t| VisibleTurn {
                side: t.side,
                round: t.round,
                thought: (t.side == viewer).then(|| t.thought.clone()),
                dialogue: t.dialogue.clone(),
                actions: t.actions.clone(),
            })
            .collect()
    }
}

/// Re-applies a transcript's turns and returns the commits of each turn.
pub fn replay_commits(
    transcript: &Transcript,
    cfg: &EngineConfig,
) -> Result<Vec<Vec<(DimensionKey, DimensionValue)>>, TurnError> {
    let mut state = NegotiationState::new(cfg.clone());
    transcript.turns.iter().map(|t| state.apply_turn(t.clone())).collect()
}

// ---------------------------------------------------------------------------
// Session driver
// ---------------------------------------------------------------------------

/// A protocol state bound to one debt record.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    record: DebtRecord,
    state: NegotiationState,
}

impl Session {
    pub fn new(id: impl Into<String>, record: DebtRecord, cfg: EngineConfig) -> Self {
        Session { id: id.into(), record, state: NegotiationState::new(cfg) }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn record(&self) -> &DebtRecord {
        &self.record
    }

    pub fn state(&self) -> &NegotiationState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut NegotiationState {
        &mut self.state
    }

    /// The context for `side`. Private data is only attached for the debtor.
    pub fn context(&self, side: Side, feedback: Option<String>) -> TurnContext<'_> {
        TurnContext {
            session_id: &self.id,
            side,
            round: self.state.round(),
            max_rounds: self.state.config().max_rounds,
            basic: self.record.basic(),
            private: (side == Side::Debtor).then(|| self.record.private()),
            history: self.state.visible_history(side),
            committed: self.state.committed(),
            feedback,
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.state.transcript(self.record.record_id())
    }

    /// Asks `agent` for the pending turn, allowing one regeneration when the
    /// first attempt breaks the action rules, and applies it.
    pub fn step(
        &mut self,
        agent: &mut dyn Agent,
        notes: &mut Vec<SidecarEntry>,
    ) -> Result<Vec<(DimensionKey, DimensionValue)>, FailureKind> {
        let side = self.state.awaiting().ok_or(FailureKind::Turn(TurnError::Finished))?;
        let timeout = self.state.config().turn_timeout();
        let mut feedback = None;
        for attempt in 0..2 {
            let ctx = self.context(side, feedback.take());
            let started = Instant::now();
            let reply = agent.generate(&ctx).map_err(FailureKind::Agent)?;
            let elapsed = started.elapsed();
            if elapsed > timeout {
                return Err(FailureKind::Timeout(elapsed));
            }
            let round = self.state.round();
            notes.extend(reply.notes.into_iter().map(|n| SidecarEntry { round, side, stage: n.stage, content: n.content }));
            let turn = TurnRecord { side, round, thought: reply.thought, dialogue: reply.dialogue, actions: reply.actions };
            match self.state.check_turn(&turn) {
                Ok(()) => return self.state.apply_turn(turn).map_err(FailureKind::Turn),
                Err(TurnError::Violation(v)) if attempt == 0 => {
                    tracing::debug!(session = %self.id, %side, round, violation = %v, "regenerating turn");
                    notes.push(SidecarEntry {
                        round,
                        side,
                        stage: "rejected_turn".into(),
                        content: format!("{v}: {}", format_actions(&turn.actions)),
                    });
                    feedback = Some(format!(
                        "Your previous reply was rejected: {v}. Use only values from the allowed grids and at most one action per dimension."
                    ));
                }
                Err(e) => return Err(FailureKind::Turn(e)),
            }
        }
        unreachable!("the second attempt always returns")
    }
}

/// One logged side-channel entry (planning notes, drafts, critiques, rejected turns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub round: u32,
    pub side: Side,
    pub stage: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FailureKind {
    #[error(transparent)]
    Agent(AgentError),
    #[error("turn rejected: {0}")]
    Turn(TurnError),
    #[error("turn took {0:?}, over the configured timeout")]
    Timeout(Duration),
}

/// An aborted session, with everything recorded before the failure.
#[derive(Debug, Clone, Error)]
#[error("{side} failed in round {round} of {record_id}: {kind}")]
pub struct SessionFailure {
    pub record_id: String,
    pub side: Side,
    pub round: u32,
    pub kind: FailureKind,
    pub partial: Vec<TurnRecord>,
    pub committed: Committed,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub transcript: Transcript,
    /// Final result dictionary, including partial agreement on failure to agree.
    pub committed: Committed,
    pub warnings: Vec<ProtocolWarning>,
    pub sidecar: Vec<SidecarEntry>,
}

/// Runs one full session between two agents.
pub fn run_session(
    creditor: &mut dyn Agent,
    debtor: &mut dyn Agent,
    record: &DebtRecord,
    cfg: &EngineConfig,
    session_id: &str,
) -> Result<SessionOutput, SessionFailure> {
    let mut session = Session::new(session_id, record.clone(), cfg.clone());
    let mut sidecar = Vec::new();
    while let Some(side) = session.state().awaiting() {
        let agent: &mut dyn Agent = match side {
            Side::Creditor => creditor,
            Side::Debtor => debtor,
        };
        if let Err(kind) = session.step(agent, &mut sidecar) {
            return Err(SessionFailure {
                record_id: record.record_id().to_string(),
                side,
                round: session.state().round(),
                kind,
                partial: session.state().turns().to_vec(),
                committed: session.state().committed().clone(),
            });
        }
    }
    Ok(SessionOutput {
        transcript: session.transcript(),
        committed: session.state().committed().clone(),
        warnings: session.state().warnings().to_vec(),
        sidecar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Ratio, DimensionValue as V};

    fn pct(p: u32) -> V {
        V::Ratio(Ratio::from_percent(p))
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_actions(r#"[{"kind":"accept","dim":"pmt_days","value":7}]"#).unwrap(),
            vec![Action::accept(DimensionKey::PmtDays, V::Days(7))]
        );
        assert!(parse_actions("[]").unwrap().is_empty());
        assert_eq!(
            parse_actions(r#"[{"kind":"ask","dim":"disc_ratio","value":0.15},{"kind":"reject","dim":"inst_prds"}]"#)
                .unwrap(),
            vec![Action::ask(DimensionKey::DiscRatio, pct(15)), Action::reject(DimensionKey::InstPrds, None)]
        );
    }

    #[test]
    fn parse_is_lenient_about_layout() {
        let raw = "```json\n[ {\"kind\" : \"ask\",\n \"dim\":\"inst_prds\", \"value\": 12 } ]\n```";
        assert_eq!(parse_actions(raw).unwrap(), vec![Action::ask(DimensionKey::InstPrds, V::Months(12))]);
        assert_eq!(
            parse_actions(r#"{"kind":"ask","dim":"pmt_ratio","value":"20%"}"#).unwrap(),
            vec![Action::ask(DimensionKey::PmtRatio, pct(20))]
        );
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_actions("[{\"kind\":\"ask\",").unwrap_err();
        assert!(err.location.starts_with("line 1"), "{err}");
        let err = parse_actions(r#"[{"kind":"ask","dim":"grace","value":3}]"#).unwrap_err();
        assert_eq!(err.location, "element 0");
        assert!(err.message.contains("unknown dimension"));
        assert!(parse_actions("   ").is_err());
        assert!(parse_actions("42").is_err());
    }

    #[test]
    fn creditor_accept_never_commits() {
        let mut s = NegotiationState::new(EngineConfig::default());
        let turn = TurnRecord {
            side: Side::Creditor,
            round: 1,
            thought: String::new(),
            dialogue: String::new(),
            actions: vec![Action::accept(DimensionKey::InstPrds, V::Months(12))],
        };
        assert!(s.apply_turn(turn).unwrap().is_empty());
        assert!(s.committed().is_empty());
    }

    fn debtor_turn(round: u32, actions: Vec<Action>) -> TurnRecord {
        TurnRecord { side: Side::Debtor, round, thought: String::new(), dialogue: String::new(), actions }
    }

    fn creditor_turn(round: u32, actions: Vec<Action>) -> TurnRecord {
        TurnRecord { side: Side::Creditor, round, thought: String::new(), dialogue: String::new(), actions }
    }

    #[test]
    fn debtor_accept_commits_once() {
        let mut s = NegotiationState::new(EngineConfig::default());
        s.apply_turn(creditor_turn(1, vec![Action::ask(DimensionKey::DiscRatio, pct(10))])).unwrap();
        let commits = s.apply_turn(debtor_turn(1, vec![Action::accept(DimensionKey::DiscRatio, pct(10))])).unwrap();
        assert_eq!(commits, vec![(DimensionKey::DiscRatio, pct(10))]);
        s.apply_turn(creditor_turn(2, vec![])).unwrap();
        let commits = s.apply_turn(debtor_turn(2, vec![Action::accept(DimensionKey::DiscRatio, pct(20))])).unwrap();
        assert!(commits.is_empty());
        assert_eq!(s.committed()[&DimensionKey::DiscRatio], pct(10));
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn off_grid_rejected_under_strict_grid() {
        let mut s = NegotiationState::new(EngineConfig::default());
        let bad = creditor_turn(1, vec![Action::ask(DimensionKey::DiscRatio, pct(13))]);
        assert!(matches!(s.apply_turn(bad.clone()), Err(TurnError::Violation(ActionViolation::OffGrid { .. }))));
        let mut lax = NegotiationState::new(EngineConfig { strict_grid: false, ..Default::default() });
        assert!(lax.apply_turn(bad).is_ok());
    }

    #[test]
    fn turn_order_enforced() {
        let mut s = NegotiationState::new(EngineConfig::default());
        assert!(matches!(s.apply_turn(debtor_turn(1, vec![])), Err(TurnError::WrongSide { .. })));
        assert!(matches!(s.apply_turn(creditor_turn(2, vec![])), Err(TurnError::WrongRound { .. })));
    }

    #[test]
    fn max_rounds_finishes_without_outcome() {
        let mut s = NegotiationState::new(EngineConfig { max_rounds: 2, ..Default::default() });
        for r in 1..=2 {
            s.apply_turn(creditor_turn(r, vec![])).unwrap();
            s.apply_turn(debtor_turn(r, vec![])).unwrap();
        }
        assert_eq!(s.phase(), Phase::Finished(TerminationReason::MaxTurns));
        assert!(s.outcome().is_none());
        assert!(matches!(s.apply_turn(creditor_turn(3, vec![])), Err(TurnError::Finished)));
    }

    #[test]
    fn visible_history_hides_opponent_thoughts() {
        let mut s = NegotiationState::new(EngineConfig::default());
        let mut t = creditor_turn(1, vec![]);
        t.thought = "secret plan".into();
        s.apply_turn(t).unwrap();
        assert_eq!(s.visible_history(Side::Debtor)[0].thought, None);
        assert_eq!(s.visible_history(Side::Creditor)[0].thought.as_deref(), Some("secret plan"));
    }
}
