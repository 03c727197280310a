use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::request::{estimate_tokens, ChatRequest, ChatResponse};

pub const API_KEY_ENV: &str = "DCN_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "DCN_LLM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("could not decode provider response: {0}")]
    Decode(String),
}

impl TransportError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Status { status, .. } => matches!(status, 408 | 429) || *status >= 500,
            TransportError::Decode(_) => false,
        }
    }
}

/// Something that can answer a chat request.
pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest, timeout: Duration) -> Result<ChatResponse, TransportError>;
}

/// Refuses every call; used when only cassette replay is allowed.
#[derive(Debug, Default)]
pub struct NoTransport;

impl Transport for NoTransport {
    fn send(&self, _: &ChatRequest, _: Duration) -> Result<ChatResponse, TransportError> {
        Err(TransportError::Network("no transport configured".into()))
    }
}

/// Chat-completions over HTTP+JSON.
pub struct HttpTransport {
    base_url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        HttpTransport { base_url: base_url.into().trim_end_matches('/').to_string(), api_key }
    }

    /// Reads the base URL and credential from the environment.
    pub fn from_env() -> Self {
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        HttpTransport::new(base, std::env::var(API_KEY_ENV).ok())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest, timeout: Duration) -> Result<ChatResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut call = agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(req.wire_body()).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_ureq)?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: truncate(&body, 500) });
        }
        parse_completion(&body, req)
    }
}

fn map_ureq(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::StatusCode(status) => TransportError::Status { status, body: String::new() },
        other => TransportError::Network(other.to_string()),
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Pulls `choices[0].message.content` and usage counts out of a response body.
pub fn parse_completion(body: &str, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TransportError::Decode(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Decode("missing choices[0].message.content".into()))?
        .to_string();
    let usage = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).map(|n| n as u32);
    Ok(ChatResponse {
        prompt_tokens: usage("prompt_tokens").unwrap_or_else(|| req.estimated_prompt_tokens()),
        completion_tokens: usage("completion_tokens").unwrap_or_else(|| estimate_tokens(std::iter::once(text.as_str()))),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::request::{ChatMessage, RequestTag};

    #[test]
    fn transient_classification() {
        assert!(TransportError::Timeout.is_transient());
        assert!(TransportError::Status { status: 429, body: String::new() }.is_transient());
        assert!(TransportError::Status { status: 503, body: String::new() }.is_transient());
        assert!(!TransportError::Status { status: 401, body: String::new() }.is_transient());
        assert!(!TransportError::Decode(String::new()).is_transient());
    }

    #[test]
    fn parses_completion_body() {
        let req = ChatRequest::new("m", vec![ChatMessage::user("abcdefgh")], RequestTag::default());
        let r = parse_completion(r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}],"usage":{"prompt_tokens":11,"completion_tokens":2}}"#, &req).unwrap();
        assert_eq!((r.text.as_str(), r.prompt_tokens, r.completion_tokens), ("hello", 11, 2));
        let r = parse_completion(r#"{"choices":[{"message":{"content":"hello"}}]}"#, &req).unwrap();
        assert_eq!((r.prompt_tokens, r.completion_tokens), (2, 2));
        assert!(parse_completion(r#"{"choices":[]}"#, &req).is_err());
    }
}
