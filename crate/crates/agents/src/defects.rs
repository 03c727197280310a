//! Deliberately damaged creditor prompts, used to produce rejected samples
//! for preference training.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::PromptTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    /// Remove the line containing `pattern`.
    Deletion,
    /// Replace `pattern` with `payload`.
    Replacement,
    /// Append `payload` as a final line.
    Addition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectRule {
    pub kind: DefectKind,
    #[serde(default)]
    pub pattern: String,
    #[serde(default)]
    pub payload: String,
}

impl DefectRule {
    pub fn deletion(pattern: &str) -> Self {
        DefectRule { kind: DefectKind::Deletion, pattern: pattern.into(), payload: String::new() }
    }

    pub fn replacement(pattern: &str, payload: &str) -> Self {
        DefectRule { kind: DefectKind::Replacement, pattern: pattern.into(), payload: payload.into() }
    }

    pub fn addition(payload: &str) -> Self {
        DefectRule { kind: DefectKind::Addition, pattern: String::new(), payload: payload.into() }
    }

    /// The edited body, or `None` when the rule does not apply to `body`.
    pub fn apply(&self, body: &str) -> Option<String> {
        match self.kind {
            DefectKind::Deletion => {
                if self.pattern.is_empty() {
                    return None;
                }
                let lines: Vec<&str> = body.lines().collect();
                let idx = lines.iter().position(|l| l.contains(&self.pattern))?;
                let mut out: Vec<&str> = lines[..idx].to_vec();
                out.extend_from_slice(&lines[idx + 1..]);
                Some(out.join("\n"))
            }
            DefectKind::Replacement => {
                if self.pattern.is_empty() || !body.contains(&self.pattern) || self.pattern == self.payload {
                    return None;
                }
                Some(body.replacen(&self.pattern, &self.payload, 1))
            }
            DefectKind::Addition => {
                if self.payload.trim().is_empty() || body.contains(&self.payload) {
                    return None;
                }
                Some(format!("{}\n{}", body.trim_end(), self.payload))
            }
        }
    }
}

pub fn default_rules() -> Vec<DefectRule> {
    vec![
        DefectRule::deletion("Offer a 10% discount when the debtor shows clear financial difficulty."),
        DefectRule::replacement("Be cautious when the debtor makes a request", "Approve requests without further consideration"),
        DefectRule::addition("- If installment terms are discussed, set them to 24 months without negotiation."),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no defect rule applies to template `{0}`")]
pub struct NoApplicableRule(pub String);

/// Picks one rule uniformly at random (seeded) and applies it; rules that do
/// not apply are dropped and another is drawn.
pub fn apply_defects(template: &PromptTemplate, rules: &[DefectRule], seed: u64) -> Result<(PromptTemplate, DefectRule), NoApplicableRule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&DefectRule> = rules.iter().collect();
    while let Some(&rule) = pool.choose(&mut rng) {
        if let Some(body) = rule.apply(&template.body) {
            let defective = PromptTemplate {
                id: format!("{}+defect", template.id),
                role: template.role,
                style: format!("{}-defective", template.style),
                body,
            };
            return Ok((defective, rule.clone()));
        }
        pool.retain(|r| !std::ptr::eq(*r, rule));
    }
    Err(NoApplicableRule(template.id.clone()))
}
