//! Rejection sampling: candidate dialogues per record under several creditor
//! styles, a quality filter, per-record CCI ranking and a global top-60% cut.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use dcn_agents::AgentSpec;
use dcn_core::domain::{DebtRecord, Transcript};
use dcn_core::metrics::{evaluate_sample, MetricWeights, SampleMetrics};
use serde::{Deserialize, Serialize};

use crate::bench::{load_records, write_json, write_jsonl, RunHooks, SessionRunner};
use crate::config::{template_store, RunSpec};
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub record_id: String,
    pub style: String,
    pub transcript: Transcript,
    pub metrics: SampleMetrics,
    /// CCI of this sample taken alone.
    pub cci: f64,
    pub complete: bool,
}

impl Candidate {
    pub fn new(style: &str, transcript: Transcript, record: &DebtRecord, spec: &RunSpec) -> Result<Self, PipelineError> {
        let eval = evaluate_sample(&transcript, record, &spec.projection, &spec.metrics)?;
        Ok(Candidate::from_metrics(style, transcript, eval.metrics, &spec.metrics))
    }

    pub fn from_metrics(style: &str, transcript: Transcript, metrics: SampleMetrics, weights: &MetricWeights) -> Self {
        Candidate {
            record_id: transcript.record_id.clone(),
            style: style.to_string(),
            complete: transcript.outcome.is_some(),
            cci: metrics.indices(weights).cci,
            transcript,
            metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Filter1 {
    pub require_success: bool,
    pub min_rr: f64,
    /// `None` allows any number of tier-1 days.
    pub max_l1d: Option<u32>,
}

impl Default for Filter1 {
    fn default() -> Self {
        Filter1 { require_success: true, min_rr: 0.7, max_l1d: None }
    }
}

impl Filter1 {
    pub fn passes(&self, c: &Candidate) -> bool {
        c.complete
            && (!self.require_success || c.metrics.success)
            && c.metrics.rr >= self.min_rr
            && self.max_l1d.is_none_or(|m| c.metrics.l1d <= m)
    }
}

/// Drops incomplete candidates and those under the metric thresholds.
pub fn filter1(cands: Vec<Candidate>, thresholds: &Filter1) -> Vec<Candidate> {
    cands.into_iter().filter(|c| thresholds.passes(c)).collect()
}

fn by_cci(a: f64, b: f64) -> Ordering {
    // NaN ranks last.
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        _ => a.total_cmp(&b),
    }
}

/// Keeps the highest-CCI candidate of each record. Ties go to the style that
/// comes first in `style_order`; unknown styles rank after known ones.
/// Output is sorted by record id.
pub fn select_best_per_record(cands: Vec<Candidate>, style_order: &[String]) -> Vec<Candidate> {
    let rank = |s: &str| style_order.iter().position(|x| x == s).unwrap_or(usize::MAX);
    let mut best: BTreeMap<String, Candidate> = BTreeMap::new();
    for c in cands {
        match best.get(&c.record_id) {
            Some(cur) => {
                let better = match by_cci(c.cci, cur.cci) {
                    Ordering::Greater => true,
                    Ordering::Equal => rank(&c.style) < rank(&cur.style),
                    Ordering::Less => false,
                };
                if better {
                    best.insert(c.record_id.clone(), c);
                }
            }
            None => {
                best.insert(c.record_id.clone(), c);
            }
        }
    }
    best.into_values().collect()
}

/// How many entries the top-60% cut keeps from a pool of `n`.
pub fn keep_count(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n * 3 / 5).max(1)
    }
}

/// Sorts by CCI, highest first (stable), and keeps the top 60%.
pub fn filter2(mut pool: Vec<Candidate>) -> Vec<Candidate> {
    let k = keep_count(pool.len());
    pool.sort_by(|a, b| by_cci(b.cci, a.cci));
    pool.truncate(k);
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub tag: String,
    pub creditor: AgentSpec,
}

pub fn default_styles() -> Vec<StyleSpec> {
    ["standard", "strict", "gentle"]
        .into_iter()
        .map(|s| StyleSpec { tag: s.into(), creditor: AgentSpec::Llm { template: format!("creditor_{s}") } })
        .collect()
}

fn default_style_list() -> Vec<StyleSpec> {
    default_styles()
}

/// A sampling job. `base` supplies the dataset, debtor, engine, LLM and
/// metric settings; its creditor is replaced by each style in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    #[serde(flatten)]
    pub base: RunSpec,
    #[serde(default = "default_style_list")]
    pub styles: Vec<StyleSpec>,
    #[serde(default)]
    pub filter1: Filter1,
}

impl SampleSpec {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut spec: SampleSpec = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        spec.base.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn style_order(&self) -> Vec<String> {
        self.styles.iter().map(|s| s.tag.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub candidates: usize,
    pub failed_sessions: usize,
    pub after_filter1: usize,
    pub pool: usize,
    pub kept: usize,
    pub filter1: Filter1,
    pub styles: Vec<String>,
}

pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub struct SampleOutput {
    pub summary: SampleSummary,
    pub final_set: Vec<Candidate>,
    pub final_path: PathBuf,
}

/// Generates (or reloads) candidates and applies both filters. Writes
/// `candidates.jsonl`, `filter1.jsonl`, `pool.jsonl`, `final.jsonl` and
/// `sampling.json` under the output directory. An existing
/// `candidates.jsonl` is reused, so reruns only redo the deterministic stages.
pub fn run_sampling(spec: &SampleSpec, hooks: RunHooks<'_>) -> Result<SampleOutput, PipelineError> {
    let base = &spec.base;
    base.validate()?;
    let dir = &base.out;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let cand_path = dir.join("candidates.jsonl");
    let mut records = load_records(&base.dataset)?;
    if let Some(n) = base.limit {
        records.truncate(n);
    }
    let (cands, failed) = if cand_path.exists() {
        (read_candidates(&cand_path)?, 0)
    } else {
        let (c, f) = generate_candidates(spec, &records, hooks)?;
        write_jsonl(&cand_path, &c)?;
        (c, f)
    };
    let n_cands = cands.len();
    let passed = filter1(cands, &spec.filter1);
    write_jsonl(&dir.join("filter1.jsonl"), &passed)?;
    let n_passed = passed.len();
    let pool = select_best_per_record(passed, &spec.style_order());
    write_jsonl(&dir.join("pool.jsonl"), &pool)?;
    let n_pool = pool.len();
    let final_set = filter2(pool);
    let final_path = dir.join("final.jsonl");
    write_jsonl(&final_path, &final_set)?;
    let summary = SampleSummary {
        candidates: n_cands,
        failed_sessions: failed,
        after_filter1: n_passed,
        pool: n_pool,
        kept: final_set.len(),
        filter1: spec.filter1.clone(),
        styles: spec.style_order(),
    };
    write_json(&dir.join("sampling.json"), &summary)?;
    Ok(SampleOutput { summary, final_set, final_path })
}

/// One session per (record, style). Failed sessions yield no candidate.
pub fn generate_candidates(
    spec: &SampleSpec,
    records: &[DebtRecord],
    hooks: RunHooks<'_>,
) -> Result<(Vec<Candidate>, usize), PipelineError> {
    let base = &spec.base;
    let templates = template_store(base.templates_dir.as_deref())?;
    let needs_llm = base.debtor.needs_llm() || spec.styles.iter().any(|s| s.creditor.needs_llm());
    let client = if needs_llm { Some(base.llm.build_client()?) } else { None };
    let by_id: BTreeMap<&str, &DebtRecord> = records.iter().map(|r| (r.record_id(), r)).collect();
    let mut cands = Vec::new();
    let mut failed = 0;
    for style in &spec.styles {
        let label = format!("{}-{}", base.label, style.tag);
        let runner = SessionRunner {
            creditor: &style.creditor,
            debtor: &base.debtor,
            engine: &base.engine,
            client: client.as_ref(),
            templates: &templates,
            label: &label,
        };
        for res in runner.run_all(records, base.parallel, hooks)? {
            match res.outcome {
                Ok(t) => cands.push(Candidate::new(&style.tag, t, by_id[res.record_id.as_str()], base)?),
                Err(_) => failed += 1,
            }
        }
    }
    if let Some(c) = &client {
        c.finish_recording()?;
    }
    cands.sort_by(|a, b| (&a.record_id, &a.style).cmp(&(&b.record_id, &b.style)));
    Ok((cands, failed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_counts() {
        assert_eq!(keep_count(0), 0);
        assert_eq!(keep_count(1), 1);
        assert_eq!(keep_count(2), 1);
        assert_eq!(keep_count(5), 3);
        assert_eq!(keep_count(10), 6);
        assert_eq!(keep_count(437), 262);
    }

    #[test]
    fn nan_ranks_last() {
        assert_eq!(by_cci(f64::NAN, 0.1), Ordering::Less);
        assert_eq!(by_cci(0.3, 0.1), Ordering::Greater);
    }
}
