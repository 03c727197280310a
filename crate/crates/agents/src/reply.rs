//! Parsing of `Thought: / Dialogue: / Action:` replies.

use std::sync::LazyLock;

use dcn_core::domain::Action;
use dcn_core::engine::parse_actions;
use regex::Regex;
use thiserror::Error;

static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[\s>#*_-]*(thought|dialogue|actions?)[\s*_]*[:：][\s*_]*").expect("valid regex")
});

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplyError {
    #[error("reply has no {0} block")]
    MissingBlock(&'static str),
    #[error("action block: {0}")]
    Actions(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReply {
    pub thought: String,
    pub dialogue: String,
    pub actions: Vec<Action>,
}

/// Splits a reply into its labelled blocks. Later duplicates of a label are
/// ignored; Thought may be absent, Dialogue and Action may not.
pub fn parse_reply(text: &str) -> Result<ParsedReply, ReplyError> {
    let marks: Vec<(usize, usize, String)> = LABEL
        .captures_iter(text)
        .map(|c| {
            let whole = c.get(0).expect("match");
            (whole.start(), whole.end(), c[1].to_ascii_lowercase())
        })
        .collect();
    let block = |name: &str| -> Option<String> {
        let i = marks.iter().position(|(_, _, label)| label.trim_end_matches('s') == name)?;
        let start = marks[i].1;
        let end = marks.get(i + 1).map(|m| m.0).unwrap_or(text.len());
        Some(text[start..end].trim().to_string())
    };
    let dialogue = block("dialogue").ok_or(ReplyError::MissingBlock("Dialogue"))?;
    let action_text = block("action").ok_or(ReplyError::MissingBlock("Action"))?;
    let actions = parse_actions(&action_text).map_err(|e| ReplyError::Actions(e.to_string()))?;
    Ok(ParsedReply { thought: block("thought").unwrap_or_default(), dialogue, actions })
}

/// Renders a reply in the format `parse_reply` reads.
pub fn format_reply(thought: &str, dialogue: &str, actions: &[Action]) -> String {
    format!("Thought: {thought}\nDialogue: {dialogue}\nAction: {}", dcn_core::engine::format_actions(actions))
}

/// Value of a `Key: value` line, case-insensitive on the key.
pub fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '#', '-', ' ']);
        let (k, v) = line.split_once(':')?;
        k.trim().trim_matches('*').eq_ignore_ascii_case(key).then(|| v.trim().trim_matches('*').trim())
    })
}
