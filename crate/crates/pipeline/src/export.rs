//! Training files from the sampled dialogues: one example per creditor turn.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dcn_agents::{apply_defects, default_rules, format_reply, prompt_messages, DefectRule, LlmAgent, PromptTemplate, TemplateStore};
use dcn_core::domain::{DebtRecord, Side, Transcript};
use dcn_core::engine::{EngineConfig, Session};
use dcn_llm::{ChatMessage, LlmClient};
use serde::{Deserialize, Serialize};

use crate::bench::{load_records, write_jsonl};
use crate::config::{template_store, LlmSettings};
use crate::sampling::{read_candidates, Candidate};
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    Sft,
    Dpo,
}

impl std::str::FromStr for ExportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sft" => Ok(ExportMode::Sft),
            "dpo" => Ok(ExportMode::Dpo),
            other => Err(format!("unknown export mode `{other}` (sft, dpo)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub record_id: String,
    pub round: u32,
    pub messages: Vec<ChatMessage>,
    pub chosen: String,
    pub rejected: Option<String>,
}

#[derive(Serialize)]
struct SftLine<'a> {
    messages: &'a [ChatMessage],
    response: &'a str,
}

#[derive(Serialize)]
struct DpoLine<'a> {
    messages: &'a [ChatMessage],
    chosen: &'a str,
    rejected: &'a str,
}

/// A creditor turn with the exact prompt the creditor would have seen.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnPrompt {
    pub round: u32,
    pub messages: Vec<ChatMessage>,
    pub response: String,
}

/// Rebuilds the creditor's prompt before each of its turns from the
/// transcript alone.
pub fn creditor_prompts(
    transcript: &Transcript,
    record: &DebtRecord,
    template: &PromptTemplate,
    engine: &EngineConfig,
) -> Result<Vec<TurnPrompt>, PipelineError> {
    let mut session = Session::new(format!("export/{}", transcript.record_id), record.clone(), engine.clone());
    let mut out = Vec::new();
    for turn in &transcript.turns {
        if turn.side == Side::Creditor {
            let ctx = session.context(Side::Creditor, None);
            out.push(TurnPrompt {
                round: turn.round,
                messages: prompt_messages(template, &ctx, None),
                response: format_reply(&turn.thought, &turn.dialogue, &turn.actions),
            });
        }
        session
            .state_mut()
            .apply_turn(turn.clone())
            .map_err(|e| PipelineError::Config(format!("transcript {} does not replay: {e}", transcript.record_id)))?;
    }
    Ok(out)
}

fn default_rule_list() -> Vec<DefectRule> {
    default_rules()
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSpec {
    /// `final.jsonl` from sampling.
    pub input: PathBuf,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub mode: ExportMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Style tag to creditor template id; unlisted styles use `creditor_<style>`.
    #[serde(default)]
    pub styles: BTreeMap<String, String>,
    #[serde(default = "default_rule_list")]
    pub rules: Vec<DefectRule>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineConfig,
    /// Client for generating rejected turns (dpo only).
    #[serde(default)]
    pub llm: LlmSettings,
}

impl ExportSpec {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut spec: ExportSpec = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        spec.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn resolve(&mut self, base: &Path) {
        self.input = base.join(&self.input);
        self.dataset = base.join(&self.dataset);
        self.out = base.join(&self.out);
        if let Some(t) = &self.templates_dir {
            self.templates_dir = Some(base.join(t));
        }
        self.llm.resolve(base);
    }

    pub fn template_for(&self, style: &str) -> String {
        self.styles.get(style).cloned().unwrap_or_else(|| format!("creditor_{style}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportStats {
    pub pairs: usize,
    /// Rejected-turn generation failed.
    pub skipped: usize,
    /// Rejected turn came out identical to the chosen one.
    pub identical: usize,
}

/// Builds pairs for every creditor turn of every candidate. In dpo mode
/// `negative` generates the rejected turn from a defective copy of the
/// candidate's template; the prompt context stays the clean one.
pub fn export_pairs(
    final_set: &[Candidate],
    records: &BTreeMap<String, DebtRecord>,
    spec: &ExportSpec,
    templates: &TemplateStore,
    negative: Option<&Arc<LlmClient>>,
) -> Result<(Vec<TrainingPair>, ExportStats), PipelineError> {
    let mut pairs = Vec::new();
    let mut stats = ExportStats::default();
    let mut index = 0u64;
    for cand in final_set {
        let record = records
            .get(&cand.record_id)
            .ok_or_else(|| PipelineError::Config(format!("record {} not in dataset", cand.record_id)))?;
        let template = templates.resolve(&spec.template_for(&cand.style))?;
        for prompt in creditor_prompts(&cand.transcript, record, &template, &spec.engine)? {
            index += 1;
            let rejected = match (spec.mode, negative) {
                (ExportMode::Sft, _) => None,
                (ExportMode::Dpo, None) => return Err(PipelineError::Config("dpo export needs an LLM client".into())),
                (ExportMode::Dpo, Some(client)) => {
                    match regenerate(cand, record, &template, &spec.rules, spec.seed.wrapping_add(index), prompt.round, &spec.engine, client) {
                        Ok(text) if text == prompt.response => {
                            stats.identical += 1;
                            continue;
                        }
                        Ok(text) => Some(text),
                        Err(e) => {
                            tracing::warn!(record = %cand.record_id, round = prompt.round, error = %e, "negative generation failed; pair skipped");
                            stats.skipped += 1;
                            continue;
                        }
                    }
                }
            };
            pairs.push(TrainingPair {
                record_id: cand.record_id.clone(),
                round: prompt.round,
                messages: prompt.messages,
                chosen: prompt.response,
                rejected,
            });
        }
    }
    stats.pairs = pairs.len();
    Ok((pairs, stats))
}

#[allow(clippy::too_many_arguments)]
fn regenerate(
    cand: &Candidate,
    record: &DebtRecord,
    template: &PromptTemplate,
    rules: &[DefectRule],
    seed: u64,
    round: u32,
    engine: &EngineConfig,
    client: &Arc<LlmClient>,
) -> Result<String, PipelineError> {
    let (defective, _) = apply_defects(template, rules, seed).map_err(|e| PipelineError::Config(e.to_string()))?;
    let agent = LlmAgent::new(Side::Creditor, defective, client.clone())?;
    let mut session = Session::new(format!("export/{}", cand.record_id), record.clone(), engine.clone());
    for turn in cand.transcript.turns.iter().take_while(|t| !(t.side == Side::Creditor && t.round == round)) {
        session
            .state_mut()
            .apply_turn(turn.clone())
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let ctx = session.context(Side::Creditor, None);
    let (reply, _) = agent.draft(&ctx, None).map_err(|e| PipelineError::Agent(e.to_string()))?;
    Ok(format_reply(&reply.thought, &reply.dialogue, &reply.actions))
}

pub fn write_pairs(path: &Path, pairs: &[TrainingPair], mode: ExportMode) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    match mode {
        ExportMode::Sft => write_jsonl(path, pairs.iter().map(|p| SftLine { messages: &p.messages, response: &p.chosen })),
        ExportMode::Dpo => write_jsonl(
            path,
            pairs.iter().filter_map(|p| {
                p.rejected.as_deref().map(|r| DpoLine { messages: &p.messages, chosen: &p.chosen, rejected: r })
            }),
        ),
    }
}

/// Reads the sampled set and dataset named in `spec`, builds pairs and writes them.
pub fn run_export(spec: &ExportSpec) -> Result<ExportStats, PipelineError> {
    let final_set = read_candidates(&spec.input)?;
    let records: BTreeMap<String, DebtRecord> =
        load_records(&spec.dataset)?.into_iter().map(|r| (r.record_id().to_string(), r)).collect();
    let templates = template_store(spec.templates_dir.as_deref())?;
    let client = match spec.mode {
        ExportMode::Dpo => Some(spec.llm.build_client()?),
        ExportMode::Sft => None,
    };
    let (pairs, stats) = export_pairs(&final_set, &records, spec, &templates, client.as_ref())?;
    if let Some(c) = &client {
        c.finish_recording()?;
    }
    write_pairs(&spec.out, &pairs, spec.mode)?;
    Ok(stats)
}
