use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Identifies a call for logs and errors. Not part of the request hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RequestTag {
    pub session: String,
    pub turn: u32,
    pub stage: String,
}

impl RequestTag {
    pub fn new(session: impl Into<String>, turn: u32, stage: impl Into<String>) -> Self {
        RequestTag { session: session.into(), turn, stage: stage.into() }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/turn{}/{}", self.session, self.turn, self.stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, tag: RequestTag) -> Self {
        ChatRequest { messages, model: model.into(), temperature: 0.0, max_tokens: 1024, tag }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("messages must not be empty".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        Ok(())
    }

    /// SHA-256 over messages, model, temperature and max_tokens.
    pub fn canonical_hash(&self) -> String {
        let canonical = json!({
            "messages": self.messages,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    /// The chat-completions request body.
    pub fn wire_body(&self) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    /// Rough token count used when a provider does not report usage.
    pub fn estimated_prompt_tokens(&self) -> u32 {
        estimate_tokens(self.messages.iter().map(|m| m.content.as_str()))
    }
}

pub(crate) fn estimate_tokens<'a>(texts: impl Iterator<Item = &'a str>) -> u32 {
    let chars: usize = texts.map(|t| t.chars().count()).sum();
    chars.div_ceil(4) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}
