//! Creditor made of three cooperating LLM roles: the communicating agent
//! drafts each turn, a planning agent classifies the debtor once, and a
//! neutral judge reviews every later draft before it is sent.

use std::sync::Arc;

use dcn_core::domain::Side;
use dcn_core::engine::{format_actions, Agent, AgentError, AgentNote, AgentTurn, TurnContext};
use dcn_llm::{ChatMessage, LlmClient};
use serde::{Deserialize, Serialize};

use crate::llm_agent::{converse, llm_err, tag, LlmAgent};
use crate::reply::{field, ParsedReply};
use crate::template::{PromptTemplate, TemplateError, TemplateStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebtorCategory {
    pub key: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MadenConfig {
    pub categories: Vec<DebtorCategory>,
    pub judge_iterations: u32,
    pub plan_template: String,
    pub judge_template: String,
}

#[derive(Deserialize)]
struct BuiltinConfig {
    categories: Vec<DebtorCategory>,
    judge_iterations: u32,
    plan_template: String,
    judge_template: String,
}

impl Default for MadenConfig {
    fn default() -> Self {
        let b: BuiltinConfig = toml::from_str(include_str!("../templates/maden_categories.toml")).expect("built-in config is valid");
        MadenConfig {
            categories: b.categories,
            judge_iterations: b.judge_iterations,
            plan_template: b.plan_template,
            judge_template: b.judge_template,
        }
    }
}

impl MadenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.categories.len() != 4 {
            return Err(format!("exactly four debtor categories are required, got {}", self.categories.len()));
        }
        Ok(())
    }

    fn category_list(&self) -> String {
        self.categories.iter().map(|c| format!("- {}: {}", c.key, c.description)).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub approve: bool,
    pub critique: String,
}

/// Reads a judge reply. Anything that is not an explicit approval, or a
/// critique of "no issues", asks for a revision.
pub fn parse_verdict(text: &str) -> Verdict {
    let critique = field(text, "critique").unwrap_or(text.trim()).to_string();
    let no_issues = critique.to_ascii_lowercase().contains("no issues");
    let approve = match field(text, "verdict").map(str::to_ascii_uppercase) {
        Some(v) if v.contains("REVISE") => false,
        Some(v) if v.contains("APPROVE") => true,
        _ => no_issues,
    };
    Verdict { approve, critique }
}

pub struct MadenCreditor {
    base: LlmAgent,
    plan_template: PromptTemplate,
    judge_template: PromptTemplate,
    config: MadenConfig,
    plan: Option<String>,
    plan_attempted: bool,
}

impl MadenCreditor {
    pub fn new(
        template: PromptTemplate,
        config: MadenConfig,
        templates: &TemplateStore,
        client: Arc<LlmClient>,
    ) -> Result<Self, TemplateError> {
        config.validate().map_err(|message| TemplateError::File { path: "maden config".into(), message })?;
        Ok(MadenCreditor {
            plan_template: templates.resolve(&config.plan_template)?,
            judge_template: templates.resolve(&config.judge_template)?,
            base: LlmAgent::new(Side::Creditor, template, client)?,
            config,
            plan: None,
            plan_attempted: false,
        })
    }

    fn client(&self) -> &LlmClient {
        self.base.client()
    }

    fn run_plan(&self, ctx: &TurnContext<'_>) -> Result<String, AgentError> {
        let categories = self.config.category_list();
        let system = self.plan_template.render(ctx, &[("categories", &categories)]);
        let messages = vec![
            ChatMessage::system(system),
            ChatMessage::user("## Task: planning\nClassify the customer and plan the rest of the negotiation."),
        ];
        let req = self.client().request(messages, tag(ctx, "creditor.plan"));
        Ok(self.client().chat(&req).map_err(llm_err)?.text.trim().to_string())
    }

    fn run_judge(&self, ctx: &TurnContext<'_>, draft: &ParsedReply) -> Result<(Verdict, String), AgentError> {
        let shown = format!("Dialogue: {}\nAction: {}", draft.dialogue, format_actions(&draft.actions));
        let system = self.judge_template.render(ctx, &[("draft", &shown)]);
        let messages = vec![ChatMessage::system(system), ChatMessage::user("## Task: review\nGive your verdict on the draft.")];
        let req = self.client().request(messages, tag(ctx, "creditor.judge"));
        let text = self.client().chat(&req).map_err(llm_err)?.text;
        Ok((parse_verdict(&text), text))
    }

    fn run_revision(&self, ctx: &TurnContext<'_>, draft_raw: &str, critique: &str) -> Result<(ParsedReply, String), AgentError> {
        let mut messages = self.base.messages(ctx, self.plan.as_deref());
        messages.push(ChatMessage::assistant(draft_raw));
        messages.push(ChatMessage::user(format!(
            "## Task: revision\nA neutral reviewer commented on your draft:\n{critique}\nRevise your reply accordingly, keeping the Thought / Dialogue / Action format."
        )));
        converse(self.client(), messages, tag(ctx, "creditor.revise"))
    }
}

fn note(stage: &str, content: impl Into<String>) -> AgentNote {
    AgentNote { stage: stage.into(), content: content.into() }
}

impl Agent for MadenCreditor {
    fn side(&self) -> Side {
        Side::Creditor
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        let debtor_has_spoken = ctx.history.iter().any(|t| t.side == Side::Debtor);
        let mut notes = Vec::new();
        if debtor_has_spoken && !self.plan_attempted {
            self.plan_attempted = true;
            match self.run_plan(ctx) {
                Ok(plan) => {
                    notes.push(note("plan", plan.clone()));
                    self.plan = Some(plan);
                }
                Err(e) => {
                    tracing::warn!(session = ctx.session_id, error = %e, "planning failed; continuing without a plan");
                    notes.push(note("plan_failed", e.to_string()));
                }
            }
        }

        let (mut reply, mut raw) = self.base.draft(ctx, self.plan.as_deref())?;
        if debtor_has_spoken {
            notes.push(note("draft", raw.clone()));
            for _ in 0..self.config.judge_iterations {
                let (verdict, text) = match self.run_judge(ctx, &reply) {
                    Ok(v) => v,
                    Err(e) => {
                        tracing::warn!(session = ctx.session_id, error = %e, "judging failed; sending the draft");
                        notes.push(note("judge_failed", e.to_string()));
                        break;
                    }
                };
                notes.push(note("judge", text));
                if verdict.approve {
                    break;
                }
                match self.run_revision(ctx, &raw, &verdict.critique) {
                    Ok((revised, revised_raw)) => {
                        notes.push(note("revision", revised_raw.clone()));
                        reply = revised;
                        raw = revised_raw;
                    }
                    Err(e) => {
                        tracing::warn!(session = ctx.session_id, error = %e, "revision failed; sending the draft");
                        notes.push(note("revise_failed", e.to_string()));
                        break;
                    }
                }
            }
        }
        Ok(AgentTurn { thought: reply.thought, dialogue: reply.dialogue, actions: reply.actions, notes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_has_four_categories() {
        let c = MadenConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.judge_iterations, 1);
    }

    #[test]
    fn verdicts() {
        assert!(parse_verdict("Verdict: APPROVE\nCritique: no issues").approve);
        assert!(parse_verdict("no issues").approve);
        let v = parse_verdict("Verdict: REVISE\nCritique: the discount is too generous");
        assert!(!v.approve);
        assert_eq!(v.critique, "the discount is too generous");
        assert!(!parse_verdict("The offer concedes too much.").approve);
    }
}
