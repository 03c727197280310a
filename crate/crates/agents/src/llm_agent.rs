use std::sync::Arc;

use dcn_core::domain::Side;
use dcn_core::engine::{Agent, AgentError, AgentTurn, TurnContext};
use dcn_llm::{ChatMessage, LlmClient, LlmError, RequestTag};

use crate::reply::{parse_reply, ParsedReply};
use crate::template::{turn_instruction, PromptTemplate, TemplateError};

/// One chat model playing one side with a prompt template.
pub struct LlmAgent {
    side: Side,
    template: PromptTemplate,
    client: Arc<LlmClient>,
}

impl LlmAgent {
    pub fn new(side: Side, template: PromptTemplate, client: Arc<LlmClient>) -> Result<Self, TemplateError> {
        if template.role != side {
            return Err(TemplateError::File {
                path: template.id.clone(),
                message: format!("template is for the {} side, agent plays {side}", template.role),
            });
        }
        Ok(LlmAgent { side, template, client })
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn client(&self) -> &Arc<LlmClient> {
        &self.client
    }

    /// System prompt plus the per-turn instruction. `private_notes` is appended
    /// to the system prompt and never shown to the other side.
    pub fn messages(&self, ctx: &TurnContext<'_>, private_notes: Option<&str>) -> Vec<ChatMessage> {
        prompt_messages(&self.template, ctx, private_notes)
    }

    /// Produces a turn; `stage` names the call in the ledger.
    pub fn draft(&self, ctx: &TurnContext<'_>, private_notes: Option<&str>) -> Result<(ParsedReply, String), AgentError> {
        let messages = self.messages(ctx, private_notes);
        converse(&self.client, messages, tag(ctx, &format!("{}.turn", self.side)))
    }
}

/// The messages an agent using `template` sends for the turn in `ctx`.
pub fn prompt_messages(template: &PromptTemplate, ctx: &TurnContext<'_>, private_notes: Option<&str>) -> Vec<ChatMessage> {
    let mut system = template.render(ctx, &[]);
    if let Some(notes) = private_notes {
        system.push_str("\n\nPrivate strategy notes:\n");
        system.push_str(notes);
    }
    vec![ChatMessage::system(system), ChatMessage::user(turn_instruction(ctx))]
}

pub(crate) fn tag(ctx: &TurnContext<'_>, stage: &str) -> RequestTag {
    RequestTag::new(ctx.session_id, ctx.round, stage)
}

pub(crate) fn llm_err(e: LlmError) -> AgentError {
    AgentError::Llm(e.to_string())
}

/// Sends `messages`; if the reply cannot be parsed, asks once more with the
/// parse error, then gives up.
pub(crate) fn converse(
    client: &LlmClient,
    mut messages: Vec<ChatMessage>,
    tag: RequestTag,
) -> Result<(ParsedReply, String), AgentError> {
    let raw = client.chat(&client.request(messages.clone(), tag.clone())).map_err(llm_err)?.text;
    let err = match parse_reply(&raw) {
        Ok(parsed) => return Ok((parsed, raw)),
        Err(e) => e,
    };
    tracing::debug!(%tag, error = %err, "reply unparseable, asking again");
    messages.push(ChatMessage::assistant(raw));
    messages.push(ChatMessage::user(format!(
        "## Task: reformat\nYour reply could not be read ({err}). Answer again using exactly the Thought / Dialogue / Action format."
    )));
    let retry_tag = RequestTag { stage: format!("{}.retry", tag.stage), ..tag };
    let raw = client.chat(&client.request(messages, retry_tag)).map_err(llm_err)?.text;
    parse_reply(&raw).map(|p| (p, raw)).map_err(|e| AgentError::Unparseable(e.to_string()))
}

impl Agent for LlmAgent {
    fn side(&self) -> Side {
        self.side
    }

    fn generate(&mut self, ctx: &TurnContext<'_>) -> Result<AgentTurn, AgentError> {
        let (reply, _) = self.draft(ctx, None)?;
        Ok(AgentTurn { thought: reply.thought, dialogue: reply.dialogue, actions: reply.actions, notes: vec![] })
    }
}
