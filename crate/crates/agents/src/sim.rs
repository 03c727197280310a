//! A rule-based stand-in for a chat model.
//!
//! It reads the prompts produced by this crate's templates (case details,
//! protocol state, history) and answers each stage in the expected format.
//! Used to record cassette fixtures and for offline runs; it is not a model
//! of real LLM behaviour.

use std::time::Duration;

use dcn_core::domain::{
    concede_step, debtor_preference, grid_of, harden_step, Action, ActionKind, DimensionKey, DimensionValue, Ratio,
};
use dcn_core::engine::{format_actions, parse_actions};
use dcn_llm::{ChatMessage, ChatRequest, ChatResponse, Role, Transport, TransportError};
use serde_json::Value;

use crate::reply::{field, format_reply, parse_reply};

#[derive(Debug, Default, Clone, Copy)]
pub struct SimulatedLlm;

impl Transport for SimulatedLlm {
    fn send(&self, req: &ChatRequest, _: Duration) -> Result<ChatResponse, TransportError> {
        let text = respond(&req.messages);
        Ok(ChatResponse {
            prompt_tokens: req.estimated_prompt_tokens(),
            completion_tokens: text.len().div_ceil(4) as u32,
            text,
        })
    }
}

fn task(msg: &str) -> &str {
    msg.lines().next().and_then(|l| l.strip_prefix("## Task:")).map(str::trim).unwrap_or("")
}

/// Answers the conversation in `messages`.
pub fn respond(messages: &[ChatMessage]) -> String {
    let system = messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str()).unwrap_or("");
    let Some(last_user) = messages.iter().rposition(|m| m.role == Role::User) else {
        return format_reply("", "Hello.", &[]);
    };
    let user = messages[last_user].content.as_str();
    match task(user) {
        "creditor turn" => creditor_turn(system, user),
        "debtor turn" => debtor_turn(system, user),
        "planning" => plan(system),
        "review" => judge(system),
        "revision" => revise(system, messages.get(last_user.wrapping_sub(1)).map(|m| m.content.as_str()).unwrap_or("")),
        // Answer the original request again.
        "reformat" => respond(&messages[..last_user.saturating_sub(1)]),
        _ => format_reply("", "Could you repeat that?", &[]),
    }
}

fn actions_field(text: &str, key: &str) -> Vec<Action> {
    field(text, key).and_then(|v| parse_actions(v).ok()).unwrap_or_default()
}

fn money_field(text: &str, key: &str) -> f64 {
    field(text, key).and_then(|v| v.parse().ok()).unwrap_or(0.0)
}

fn committed(user: &str) -> Vec<DimensionKey> {
    let map: serde_json::Map<String, Value> =
        field(user, "Agreed so far").and_then(|v| serde_json::from_str(v).ok()).unwrap_or_default();
    map.keys().filter_map(|k| k.parse().ok()).collect()
}

fn open_dims(user: &str) -> Vec<DimensionKey> {
    let done = committed(user);
    DimensionKey::ALL.iter().copied().filter(|k| !done.contains(k)).collect()
}

fn round(user: &str) -> u32 {
    user.lines()
        .find_map(|l| l.strip_prefix("Round ").and_then(|r| r.split_whitespace().next()).and_then(|n| n.parse().ok()))
        .unwrap_or(1)
}

fn pct(p: u32) -> DimensionValue {
    DimensionValue::Ratio(Ratio::from_percent(p))
}

/// Behaviour knobs read from the creditor's system prompt.
struct CreditorStyle {
    opening: (u32, u32, u32, u32),
    steps: usize,
    /// Jump straight to the customer's counter-offer.
    yields: bool,
    /// Never concede on the discount.
    holds_discount: bool,
    force_24_months: bool,
}

impl CreditorStyle {
    fn read(system: &str) -> Self {
        let category = field(system, "Category").unwrap_or("").to_ascii_lowercase();
        let (opening, steps) = if system.contains("Keep the immediate payment high") {
            ((0, 40, 1, 3), 1)
        } else if system.contains("find a plan they can keep to") {
            ((5, 20, 7, 12), 2)
        } else {
            ((0, 30, 3, 6), 1)
        };
        CreditorStyle {
            opening,
            steps,
            yields: category == "hardship" || system.contains("Approve requests without further consideration"),
            holds_discount: !system.contains("Offer a 10% discount"),
            force_24_months: system.contains("set them to 24 months without negotiation"),
        }
    }

    fn opening(&self, dim: DimensionKey) -> DimensionValue {
        let (disc, pmt, days, inst) = self.opening;
        match dim {
            DimensionKey::DiscRatio => pct(disc),
            DimensionKey::PmtRatio => pct(pmt),
            DimensionKey::PmtDays => DimensionValue::Days(days),
            DimensionKey::InstPrds if self.force_24_months => DimensionValue::Months(24),
            DimensionKey::InstPrds => DimensionValue::Months(inst),
        }
    }

    fn concede(&self, dim: DimensionKey, from: DimensionValue, counter: Option<DimensionValue>) -> DimensionValue {
        if dim == DimensionKey::DiscRatio && self.holds_discount {
            return from;
        }
        if dim == DimensionKey::InstPrds && self.force_24_months {
            return DimensionValue::Months(24);
        }
        if let (true, Some(c)) = (self.yields, counter) {
            return c;
        }
        let mut next = from;
        for _ in 0..self.steps {
            next = concede_step(dim, next).unwrap_or(next);
        }
        match counter {
            Some(c) if debtor_preference(dim, next, c).is_gt() => c,
            _ => next,
        }
    }
}

fn describe(actions: &[Action]) -> String {
    actions
        .iter()
        .filter_map(|a| a.value.map(|v| format!("{} of {v}", a.dim.label().to_lowercase())))
        .collect::<Vec<_>>()
        .join(", ")
}

fn creditor_turn(system: &str, user: &str) -> String {
    let style = CreditorStyle::read(system);
    let own = actions_field(user, "Your last actions");
    let theirs = actions_field(user, "Opponent's last actions");
    let mut asks = Vec::new();
    for dim in open_dims(user) {
        let prev = own.iter().find(|a| a.dim == dim && a.kind == ActionKind::Ask).and_then(|a| a.value);
        let reply = theirs.iter().find(|a| a.dim == dim);
        let value = match (prev, reply) {
            (None, _) => style.opening(dim),
            (Some(v), Some(r)) if r.kind == ActionKind::Reject => style.concede(dim, v, r.value),
            (Some(v), _) => v,
        };
        asks.push(Action::ask(dim, value));
    }
    let r = round(user);
    let dialogue = if r == 1 {
        format!("Hello, I am calling about your overdue balance. To settle it we propose {}.", describe(&asks))
    } else if asks.is_empty() {
        "Thank you, every term is now agreed.".to_string()
    } else {
        format!("I hear you. For the remaining terms, could you accept {}?", describe(&asks))
    };
    format_reply(&format!("Round {r}: {} open term(s).", asks.len()), &dialogue, &asks)
}

struct Reservation {
    disc: DimensionValue,
    pmt: DimensionValue,
    days: DimensionValue,
    inst: DimensionValue,
}

impl Reservation {
    fn from_prompt(system: &str) -> Self {
        let amount = money_field(system, "Amount owed").max(1.0);
        let assets = money_field(system, "Total assets").max(0.0);
        let surplus = money_field(system, "Daily surplus");
        let disc = if assets < 0.5 * amount {
            10
        } else if assets < amount {
            5
        } else {
            0
        };
        let recoverable = amount * (1.0 - disc as f64 / 100.0);
        let pmt = grid_of(DimensionKey::PmtRatio)
            .iter()
            .rev()
            .find(|v| v.as_ratio().map(|r| r.as_f64() * recoverable <= 0.4 * assets).unwrap_or(false))
            .copied()
            .unwrap_or(pct(5));
        let days = DimensionValue::Days(if assets < 0.5 * amount { 7 } else { 3 });
        let rest = recoverable * (1.0 - pmt.as_ratio().map(|r| r.as_f64()).unwrap_or(0.05));
        let monthly = (surplus.max(1.0)) * 30.0 * 0.8;
        let inst = grid_of(DimensionKey::InstPrds)
            .iter()
            .find(|v| v.as_count().map(|n| rest / n as f64 <= monthly).unwrap_or(false))
            .copied()
            .unwrap_or(DimensionValue::Months(24));
        Reservation { disc: pct(disc), pmt, days, inst }
    }

    fn get(&self, dim: DimensionKey) -> DimensionValue {
        match dim {
            DimensionKey::DiscRatio => self.disc,
            DimensionKey::PmtRatio => self.pmt,
            DimensionKey::PmtDays => self.days,
            DimensionKey::InstPrds => self.inst,
        }
    }
}

fn debtor_turn(system: &str, user: &str) -> String {
    let reservation = Reservation::from_prompt(system);
    let asks = actions_field(user, "Opponent's last actions");
    let open = open_dims(user);
    let mut actions = Vec::new();
    for ask in asks.iter().filter(|a| a.kind == ActionKind::Ask && open.contains(&a.dim)) {
        let Some(offered) = ask.value else { continue };
        let floor = reservation.get(ask.dim);
        actions.push(if debtor_preference(ask.dim, offered, floor).is_lt() {
            Action::reject(ask.dim, Some(floor))
        } else {
            Action::accept(ask.dim, offered)
        });
    }
    let accepted: Vec<Action> = actions.iter().filter(|a| a.kind == ActionKind::Accept).cloned().collect();
    let rejected: Vec<Action> = actions.iter().filter(|a| a.kind == ActionKind::Reject).cloned().collect();
    let mut dialogue = String::new();
    if round(user) == 1 {
        dialogue.push_str("Things have been difficult for me lately and I cannot pay everything at once. ");
    }
    if !accepted.is_empty() {
        dialogue.push_str(&format!("I can agree to {}. ", describe(&accepted)));
    }
    if !rejected.is_empty() {
        dialogue.push_str(&format!("I could only manage {}. ", describe(&rejected)));
    }
    if actions.is_empty() {
        dialogue.push_str("What would you propose?");
    }
    let thought = format!("{} acceptable, {} too hard.", accepted.len(), rejected.len());
    format_reply(&thought, dialogue.trim(), &actions)
}

/// Actions on the last collector line of a rendered history.
fn last_collector_actions(system: &str) -> Vec<Action> {
    let lines: Vec<&str> = system.lines().collect();
    lines
        .iter()
        .enumerate()
        .rev()
        .find(|(_, l)| l.starts_with("[Round") && l.contains("] Collector:"))
        .and_then(|(i, _)| lines.get(i + 1))
        .and_then(|l| l.trim().strip_prefix("actions:"))
        .and_then(|v| parse_actions(v.trim()).ok())
        .unwrap_or_default()
}

fn customer_rejections(system: &str) -> usize {
    let lines: Vec<&str> = system.lines().collect();
    lines
        .windows(2)
        .filter(|w| w[0].starts_with("[Round") && w[0].contains("] Customer:"))
        .filter_map(|w| w[1].trim().strip_prefix("actions:").and_then(|v| parse_actions(v.trim()).ok()))
        .flatten()
        .filter(|a| a.kind == ActionKind::Reject)
        .count()
}

fn plan(system: &str) -> String {
    let overdue = field(system, "Days overdue").and_then(|v| v.parse::<u32>().ok()).unwrap_or(0);
    let category = match customer_rejections(system) {
        _ if overdue > 180 => "hardship",
        n if n >= 3 => "hardship",
        2 => "illiquid",
        1 => "capable",
        _ => "reluctant",
    };
    let strategy = match category {
        "hardship" => "Meet the customer's stated limits quickly and secure a long plan they can keep.",
        "illiquid" => "Offer a longer grace period and medium installments; keep the discount small.",
        "capable" => "Hold a firm line on the immediate payment and concede slowly elsewhere.",
        _ => "Keep terms firm and remind the customer of the consequences of continued default.",
    };
    format!("Category: {category}\nStrategy: {strategy}\nOutcome space: any grid value no more lenient than the customer's stated limits.")
}

fn grid_distance(dim: DimensionKey, from: DimensionValue, to: DimensionValue) -> usize {
    let grid = grid_of(dim);
    match (grid.iter().position(|v| *v == from), grid.iter().position(|v| *v == to)) {
        (Some(a), Some(b)) if debtor_preference(dim, to, from).is_gt() => a.abs_diff(b),
        _ => 0,
    }
}

/// Asks that concede more than one grid step relative to the previous ask.
fn over_concessions(previous: &[Action], draft: &[Action]) -> Vec<(DimensionKey, DimensionValue, DimensionValue)> {
    draft
        .iter()
        .filter(|a| a.kind == ActionKind::Ask)
        .filter_map(|a| {
            let prev = previous.iter().find(|p| p.dim == a.dim && p.kind == ActionKind::Ask)?.value?;
            let now = a.value?;
            (grid_distance(a.dim, prev, now) > 1).then_some((a.dim, prev, now))
        })
        .collect()
}

fn judge(system: &str) -> String {
    let draft = system.split("Draft reply from the collector:").nth(1).unwrap_or("");
    let draft_actions = actions_field(draft, "Action");
    let flagged = over_concessions(&last_collector_actions(system), &draft_actions);
    if flagged.is_empty() {
        return "Verdict: APPROVE\nCritique: no issues".into();
    }
    let details: Vec<String> = flagged.iter().map(|(d, a, b)| format!("{d} moves from {a} to {b} in one step")).collect();
    format!(
        "Verdict: REVISE\nCritique: over-concession: {}. The customer has not justified that much; concede one step at a time.",
        details.join("; ")
    )
}

fn revise(system: &str, draft_raw: &str) -> String {
    let Ok(draft) = parse_reply(draft_raw) else {
        return draft_raw.to_string();
    };
    let previous = last_collector_actions(system);
    let flagged = over_concessions(&previous, &draft.actions);
    let actions: Vec<Action> = draft
        .actions
        .iter()
        .map(|a| match flagged.iter().find(|(d, _, _)| *d == a.dim) {
            Some((dim, prev, _)) => Action::ask(*dim, concede_step(*dim, *prev).unwrap_or(*prev)),
            None => *a,
        })
        .collect();
    // Keep the revision distinct even if nothing was flagged.
    let actions = if actions == draft.actions {
        actions.into_iter().map(|a| match (a.kind, a.value) {
            (ActionKind::Ask, Some(v)) => Action::ask(a.dim, harden_step(a.dim, v).unwrap_or(v)),
            _ => a,
        }).collect()
    } else {
        actions
    };
    format_reply(
        &format!("{} (revised after review)", draft.thought),
        &format!("Let me put that more carefully: could you accept {}?", describe(&actions)),
        &actions,
    )
}

/// Debug helper: the actions a reply would emit.
pub fn reply_actions(text: &str) -> String {
    parse_reply(text).map(|r| format_actions(&r.actions)).unwrap_or_default()
}
