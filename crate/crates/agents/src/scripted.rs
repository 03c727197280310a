//! Deterministic rule-based agents, used as test doubles and baselines.

use std::collections::BTreeMap;

use dcn_core::domain::{concede_step, debtor_preference, Action, ActionKind, DimensionKey, DimensionValue, Side};
use dcn_core::engine::{Agent, AgentError, AgentTurn, TurnContext};

use crate::template::open_dimensions;

/// Opening asks; each debtor rejection on a dimension moves that dimension one
/// grid step toward the debtor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedCreditor {
    pub opening: BTreeMap<DimensionKey, DimensionValue>,
}

impl Default for ScriptedCreditor {
    fn default() -> Self {
        ScriptedCreditor::new([
            (DimensionKey::DiscRatio, crate::pct(0)),
            (DimensionKey::PmtRatio, crate::pct(30)),
            (DimensionKey::PmtDays, DimensionValue::Days(3)),
            (DimensionKey::InstPrds, DimensionValue::Months(6)),
        ])
    }
}

impl ScriptedCreditor {
    pub fn new(opening: impl IntoIterator<Item = (DimensionKey, DimensionValue)>) -> Self {
        ScriptedCreditor { opening: opening.into_iter().collect() }
    }

    /// The value this creditor asks for after `rejections` debtor rejections.
    pub fn offer(&self, dim: DimensionKey, rejections: usize) -> DimensionValue {
        let mut v = self.opening[&dim];
        for _ in 0..rejections {
            match concede_step(dim, v) {
                Some(next) => v = next,
                None => break,
            }
        }
        v
    }
}

impl Agent for ScriptedCreditor {
    fn side(&self) -> Side {
        Side::Creditor
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        let actions: Vec<Action> = open_dimensions(ctx.committed)
            .into_iter()
            .filter(|d| self.opening.contains_key(d))
            .map(|dim| {
                let rejections = ctx
                    .history
                    .iter()
                    .filter(|t| t.side == Side::Debtor)
                    .flat_map(|t| &t.actions)
                    .filter(|a| a.kind == ActionKind::Reject && a.dim == dim)
                    .count();
                Action::ask(dim, self.offer(dim, rejections))
            })
            .collect();
        let terms: Vec<String> = actions.iter().map(|a| format!("{} {}", a.dim.label().to_lowercase(), a.value.expect("ask has value"))).collect();
        Ok(AgentTurn {
            thought: format!("Round {}: asking on {} open term(s).", ctx.round, actions.len()),
            dialogue: if terms.is_empty() {
                "Thank you, we have agreed every term.".into()
            } else {
                format!("We propose: {}.", terms.join(", "))
            },
            actions,
            notes: vec![],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DebtorPolicy {
    AcceptAll,
    RejectAll,
    /// Accepts any ask at least as lenient as the reservation value; dimensions
    /// without a reservation are accepted.
    Reservation { values: BTreeMap<DimensionKey, DimensionValue> },
}

/// Answers the creditor's latest asks dimension by dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedDebtor {
    pub policy: DebtorPolicy,
}

impl ScriptedDebtor {
    pub fn new(policy: DebtorPolicy) -> Self {
        ScriptedDebtor { policy }
    }

    pub fn decide(&self, dim: DimensionKey, offered: DimensionValue) -> Action {
        match &self.policy {
            DebtorPolicy::AcceptAll => Action::accept(dim, offered),
            DebtorPolicy::RejectAll => Action::reject(dim, None),
            DebtorPolicy::Reservation { values } => match values.get(&dim) {
                Some(r) if debtor_preference(dim, offered, *r).is_lt() => Action::reject(dim, Some(*r)),
                _ => Action::accept(dim, offered),
            },
        }
    }
}

impl Agent for ScriptedDebtor {
    fn side(&self) -> Side {
        Side::Debtor
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        let asks = ctx.last_opponent_turn().map(|t| t.actions.clone()).unwrap_or_default();
        let actions: Vec<Action> = asks
            .iter()
            .filter(|a| a.kind == ActionKind::Ask && !ctx.committed.contains_key(&a.dim))
            .filter_map(|a| a.value.map(|v| self.decide(a.dim, v)))
            .collect();
        let accepted = actions.iter().filter(|a| a.kind == ActionKind::Accept).count();
        Ok(AgentTurn {
            thought: format!("{accepted} of {} asks acceptable.", actions.len()),
            dialogue: match (accepted, actions.len()) {
                (_, 0) => "I am listening.".into(),
                (a, n) if a == n => "That works for me.".into(),
                (0, _) => "I cannot agree to that.".into(),
                _ => "I can agree to part of that.".into(),
            },
            actions,
            notes: vec![],
        })
    }
}
