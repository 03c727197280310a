//! Prompt templates with `{placeholder}` slots.

use std::collections::BTreeMap;
use std::path::Path;

use dcn_core::domain::{grid_of, BasicInfo, DimensionKey, PrivateInfo, Side};
use dcn_core::engine::{committed_json, format_actions, Committed, TurnContext, VisibleTurn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BASIC_INFO: &str = "{basic_info}";
pub const FINANCIAL_INFO: &str = "{financial_info}";
pub const HISTORY: &str = "{history}";
pub const DIMENSION_GRIDS: &str = "{dimension_grids}";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{0}` is for the creditor side and must not reference {{financial_info}}")]
    PrivateSlotInCreditorTemplate(String),
    #[error("unknown template `{0}`")]
    Unknown(String),
    #[error("template file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub role: Side,
    #[serde(default)]
    pub style: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, role: Side, style: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let t = PromptTemplate { id: id.into(), role, style: style.into(), body: body.into() };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), TemplateError> {
        if self.role == Side::Creditor && self.body.contains(FINANCIAL_INFO) {
            return Err(TemplateError::PrivateSlotInCreditorTemplate(self.id.clone()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, TemplateError> {
        let t: PromptTemplate =
            toml::from_str(text).map_err(|e| TemplateError::File { path: origin.to_string(), message: e.to_string() })?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Fills the standard slots from `ctx` plus any `extra` slots. Private
    /// data is only ever rendered by debtor templates for the debtor side.
    pub fn render(&self, ctx: &TurnContext<'_>, extra: &[(&str, &str)]) -> String {
        let private = match (self.role, ctx.side) {
            (Side::Debtor, Side::Debtor) => ctx.private,
            _ => None,
        };
        let mut out = self
            .body
            .replace(BASIC_INFO, &format_basic_info(ctx.basic))
            .replace(DIMENSION_GRIDS, &format_grids())
            .replace(HISTORY, &format_history(&ctx.history));
        if self.role == Side::Debtor {
            out = out.replace(FINANCIAL_INFO, &private.map(format_financial_info).unwrap_or_default());
        }
        for (key, value) in extra {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out.trim().to_string()
    }
}

pub fn format_basic_info(b: &BasicInfo) -> String {
    let sex = match b.sex {
        dcn_core::domain::Sex::Male => "male",
        dcn_core::domain::Sex::Female => "female",
    };
    format!("Name: {}\nSex: {sex}\nAmount owed: {}\nDays overdue: {}", b.name, b.amount, b.overdue_days)
}

pub fn format_financial_info(p: &PrivateInfo) -> String {
    let f = &p.profile;
    format!(
        "Total assets: {}\nDaily income: {}\nDaily expenses: {}\nDaily surplus: {}\nReason for falling behind: {}",
        f.total_assets(),
        f.daily_income(),
        f.daily_expense(),
        f.daily_surplus(),
        p.overdue_reason.detail
    )
}

pub fn format_grids() -> String {
    DimensionKey::ALL
        .iter()
        .map(|k| {
            let values: Vec<String> = grid_of(*k).iter().map(|v| v.to_json().to_string()).collect();
            format!("- {} ({}): {}", k.as_str(), k.label(), values.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_history(history: &[VisibleTurn]) -> String {
    if history.is_empty() {
        return "(no messages yet)".into();
    }
    history
        .iter()
        .map(|t| {
            let who = match t.side {
                Side::Creditor => "Collector",
                Side::Debtor => "Customer",
            };
            format!("[Round {}] {who}: {}\n  actions: {}", t.round, t.dialogue.trim(), format_actions(&t.actions))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The per-turn user message: protocol state the agent needs to answer.
pub fn turn_instruction(ctx: &TurnContext<'_>) -> String {
    let own = last_actions(&ctx.history, ctx.side);
    let other = last_actions(&ctx.history, ctx.side.opponent());
    let mut s = format!(
        "## Task: {} turn\nRound {} of {}.\nAgreed so far: {}\nYour last actions: {}\nOpponent's last actions: {}\n",
        ctx.side,
        ctx.round,
        ctx.max_rounds,
        committed_json(ctx.committed),
        own,
        other
    );
    if let Some(fb) = &ctx.feedback {
        s.push_str(&format!("Note: {fb}\n"));
    }
    s.push_str("Write your next reply in the Thought / Dialogue / Action format.");
    s
}

fn last_actions(history: &[VisibleTurn], side: Side) -> String {
    history
        .iter()
        .rev()
        .find(|t| t.side == side)
        .map(|t| format_actions(&t.actions))
        .unwrap_or_else(|| "[]".into())
}

/// Uncommitted dimensions in canonical order.
pub fn open_dimensions(committed: &Committed) -> Vec<DimensionKey> {
    DimensionKey::ALL.iter().copied().filter(|k| !committed.contains_key(k)).collect()
}

const BUILTIN: [(&str, &str); 6] = [
    ("creditor_standard", include_str!("../templates/creditor_standard.toml")),
    ("creditor_strict", include_str!("../templates/creditor_strict.toml")),
    ("creditor_gentle", include_str!("../templates/creditor_gentle.toml")),
    ("debtor_standard", include_str!("../templates/debtor_standard.toml")),
    ("maden_plan", include_str!("../templates/maden_plan.toml")),
    ("maden_judge", include_str!("../templates/maden_judge.toml")),
];

/// Built-in templates plus any loaded from disk, looked up by id.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, text)| {
                let t = PromptTemplate::from_toml(text, id).expect("built-in templates are valid");
                (t.id.clone(), t)
            })
            .collect();
        TemplateStore { templates }
    }
}

impl TemplateStore {
    pub fn insert(&mut self, t: PromptTemplate) {
        self.templates.insert(t.id.clone(), t);
    }

    /// Loads every `*.toml` file in `dir`, replacing built-ins with the same id.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), TemplateError> {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| TemplateError::File { path: dir.display().to_string(), message: e.to_string() })?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "toml")) {
            self.insert(PromptTemplate::load(&p)?);
        }
        Ok(())
    }

    /// Looks up an id, falling back to reading `name` as a file path.
    pub fn resolve(&self, name: &str) -> Result<PromptTemplate, TemplateError> {
        if let Some(t) = self.templates.get(name) {
            return Ok(t.clone());
        }
        let path = Path::new(name);
        if path.exists() {
            return PromptTemplate::load(path);
        }
        Err(TemplateError::Unknown(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
