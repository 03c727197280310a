//! Serializable agent descriptions, as written in run configurations.

use std::collections::BTreeMap;
use std::sync::Arc;

use dcn_core::domain::{DimensionKey, DimensionValue, Side};
use dcn_core::engine::Agent;
use dcn_llm::LlmClient;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm_agent::LlmAgent;
use crate::maden::{MadenConfig, MadenCreditor};
use crate::scripted::{DebtorPolicy, ScriptedCreditor, ScriptedDebtor};
use crate::template::{TemplateError, TemplateStore};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("agent `{kind}` cannot play the {side} side")]
    WrongSide { kind: &'static str, side: Side },
    #[error("agent `{kind}` needs an LLM client")]
    NoClient { kind: &'static str },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("reservation for `{dim}`: {message}")]
    Reservation { dim: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebtorPolicySpec {
    AcceptAll,
    RejectAll,
    Reservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    ScriptedCreditor {
        /// Opening asks in wire format, e.g. `{"disc_ratio": 0.0}`; missing
        /// dimensions use the defaults.
        #[serde(default)]
        opening: BTreeMap<String, Value>,
    },
    ScriptedDebtor {
        policy: DebtorPolicySpec,
        #[serde(default)]
        reservation: BTreeMap<String, Value>,
    },
    Llm {
        template: String,
    },
    Maden {
        template: String,
        #[serde(default)]
        config: MadenConfig,
    },
}

impl AgentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentSpec::ScriptedCreditor { .. } => "scripted_creditor",
            AgentSpec::ScriptedDebtor { .. } => "scripted_debtor",
            AgentSpec::Llm { .. } => "llm",
            AgentSpec::Maden { .. } => "maden",
        }
    }

    /// The prompt template id, for agents driven by one.
    pub fn template(&self) -> Option<&str> {
        match self {
            AgentSpec::Llm { template } | AgentSpec::Maden { template, .. } => Some(template),
            _ => None,
        }
    }

    pub fn needs_llm(&self) -> bool {
        matches!(self, AgentSpec::Llm { .. } | AgentSpec::Maden { .. })
    }

    /// A fresh agent for one session.
    pub fn build(&self, side: Side, client: Option<&Arc<LlmClient>>, templates: &TemplateStore) -> Result<Box<dyn Agent>, SpecError> {
        let kind = self.kind();
        let client = || client.cloned().ok_or(SpecError::NoClient { kind });
        match (self, side) {
            (AgentSpec::ScriptedCreditor { opening }, Side::Creditor) => {
                let mut agent = ScriptedCreditor::default();
                agent.opening.extend(values(opening)?);
                Ok(Box::new(agent))
            }
            (AgentSpec::ScriptedDebtor { policy, reservation }, Side::Debtor) => {
                let policy = match policy {
                    DebtorPolicySpec::AcceptAll => DebtorPolicy::AcceptAll,
                    DebtorPolicySpec::RejectAll => DebtorPolicy::RejectAll,
                    DebtorPolicySpec::Reservation => DebtorPolicy::Reservation { values: values(reservation)? },
                };
                Ok(Box::new(ScriptedDebtor::new(policy)))
            }
            (AgentSpec::Llm { template }, side) => Ok(Box::new(LlmAgent::new(side, templates.resolve(template)?, client()?)?)),
            (AgentSpec::Maden { template, config }, Side::Creditor) => {
                Ok(Box::new(MadenCreditor::new(templates.resolve(template)?, config.clone(), templates, client()?)?))
            }
            _ => Err(SpecError::WrongSide { kind, side }),
        }
    }
}

fn values(raw: &BTreeMap<String, Value>) -> Result<BTreeMap<DimensionKey, DimensionValue>, SpecError> {
    raw.iter()
        .map(|(k, v)| {
            let err = |message: String| SpecError::Reservation { dim: k.clone(), message };
            let key: DimensionKey = k.parse().map_err(|e: dcn_core::DomainError| err(e.to_string()))?;
            let value = DimensionValue::from_json(key, v).map_err(|e| err(e.to_string()))?;
            Ok((key, value))
        })
        .collect()
}
