//! Negotiating agents for the debt-collection engine.

pub mod defects;
pub mod llm_agent;
pub mod maden;
pub mod reply;
pub mod scripted;
pub mod sim;
pub mod spec;
pub mod template;

use dcn_core::domain::{DimensionValue, Ratio};

pub use defects::{apply_defects, default_rules, DefectKind, DefectRule, NoApplicableRule};
pub use llm_agent::{prompt_messages, LlmAgent};
pub use maden::{parse_verdict, DebtorCategory, MadenConfig, MadenCreditor, Verdict};
pub use reply::{format_reply, parse_reply, ParsedReply, ReplyError};
pub use scripted::{DebtorPolicy, ScriptedCreditor, ScriptedDebtor};
pub use sim::SimulatedLlm;
pub use spec::{AgentSpec, DebtorPolicySpec, SpecError};
pub use template::{PromptTemplate, TemplateError, TemplateStore};

/// A ratio dimension value given in whole percent.
pub fn pct(p: u32) -> DimensionValue {
    DimensionValue::Ratio(Ratio::from_percent(p))
}
