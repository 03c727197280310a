use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use dcn_agents::{AgentSpec, TemplateStore};
use dcn_core::domain::{read_records, DebtRecord, Side, TerminationReason, Transcript};
use dcn_core::engine::{run_session, EngineConfig, ProtocolWarning, SidecarEntry};
use dcn_core::metrics::{evaluate_dataset, write_summary_csv, MetricWeights, MetricsReport};
use dcn_llm::LlmClient;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{template_store, RunSpec};
use crate::PipelineError;

/// Progress and cancellation for long runs.
#[derive(Default, Clone, Copy)]
pub struct RunHooks<'a> {
    /// Called with (finished, total) after every session.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
    /// Sessions not yet started are skipped once this is set.
    pub cancel: Option<&'a AtomicBool>,
}

impl RunHooks<'_> {
    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub record_id: String,
    pub side: Side,
    pub round: u32,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub record_id: String,
    pub outcome: Result<Transcript, FailureInfo>,
    /// Turns played before a failure; the whole session otherwise.
    pub partial: Vec<dcn_core::domain::TurnRecord>,
    pub sidecar: Vec<SidecarEntry>,
    pub warnings: Vec<ProtocolWarning>,
}

/// Everything needed to run sessions for one agent pairing.
pub struct SessionRunner<'a> {
    pub creditor: &'a AgentSpec,
    pub debtor: &'a AgentSpec,
    pub engine: &'a EngineConfig,
    pub client: Option<&'a Arc<LlmClient>>,
    pub templates: &'a TemplateStore,
    pub label: &'a str,
}

impl SessionRunner<'_> {
    pub fn run_one(&self, record: &DebtRecord) -> SessionResult {
        let record_id = record.record_id().to_string();
        let session_id = format!("{}/{record_id}", self.label);
        let agents = self
            .creditor
            .build(Side::Creditor, self.client, self.templates)
            .and_then(|c| Ok((c, self.debtor.build(Side::Debtor, self.client, self.templates)?)));
        let (mut creditor, mut debtor) = match agents {
            Ok(pair) => pair,
            Err(e) => {
                return SessionResult {
                    outcome: Err(FailureInfo { record_id: record_id.clone(), side: Side::Creditor, round: 0, message: e.to_string() }),
                    record_id,
                    partial: vec![],
                    sidecar: vec![],
                    warnings: vec![],
                }
            }
        };
        match run_session(creditor.as_mut(), debtor.as_mut(), record, self.engine, &session_id) {
            Ok(out) => SessionResult {
                record_id,
                partial: out.transcript.turns.clone(),
                outcome: Ok(out.transcript),
                sidecar: out.sidecar,
                warnings: out.warnings,
            },
            Err(f) => {
                tracing::warn!(record = %f.record_id, side = %f.side, round = f.round, error = %f.kind, "session failed");
                SessionResult {
                    record_id,
                    outcome: Err(FailureInfo { record_id: f.record_id, side: f.side, round: f.round, message: f.kind.to_string() }),
                    partial: f.partial,
                    sidecar: vec![],
                    warnings: vec![],
                }
            }
        }
    }

    /// Runs every record on a pool of `parallel` threads. Results follow the
    /// input order; records skipped after cancellation are absent.
    pub fn run_all(&self, records: &[DebtRecord], parallel: usize, hooks: RunHooks<'_>) -> Result<Vec<SessionResult>, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel.max(1))
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let done = AtomicUsize::new(0);
        let total = records.len();
        let results: Vec<Option<SessionResult>> = pool.install(|| {
            records
                .par_iter()
                .map(|r| {
                    if hooks.cancelled() {
                        return None;
                    }
                    let res = self.run_one(r);
                    let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if let Some(p) = hooks.progress {
                        p(n, total);
                    }
                    Some(res)
                })
                .collect()
        });
        Ok(results.into_iter().flatten().collect())
    }
}

pub fn load_records(path: &Path) -> Result<Vec<DebtRecord>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut records = read_records(BufReader::new(file))?;
    records.sort_by(|a, b| a.record_id().cmp(b.record_id()));
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub results: Vec<SessionResult>,
    /// Transcripts that entered the metrics, sorted by record id.
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<FailureInfo>,
    pub report: Option<MetricsReport>,
    pub cancelled: bool,
}

impl RunOutput {
    pub fn excluded(&self) -> usize {
        self.results.len() - self.transcripts.len()
    }
}

/// Scores finished sessions. Failed sessions are dropped when
/// `exclude_failed`, otherwise they enter as sessions without agreement.
pub fn score(
    results: &[SessionResult],
    records: &[DebtRecord],
    exclude_failed: bool,
    spec: &RunSpec,
) -> Result<(Vec<Transcript>, Option<MetricsReport>), PipelineError> {
    let transcripts: Vec<Transcript> = results
        .iter()
        .filter_map(|r| match &r.outcome {
            Ok(t) => Some(t.clone()),
            Err(_) if exclude_failed => None,
            Err(f) => Some(Transcript {
                record_id: f.record_id.clone(),
                turns: r.partial.clone(),
                outcome: None,
                terminated_reason: TerminationReason::MaxTurns,
            }),
        })
        .collect();
    if transcripts.is_empty() {
        return Ok((transcripts, None));
    }
    let report = evaluate_dataset(&transcripts, records, &spec.projection, &spec.metrics)?;
    Ok((transcripts, Some(report)))
}

/// Runs one session per record and writes transcripts, metrics and the report
/// under `spec.out`.
pub fn run_benchmark(spec: &RunSpec, hooks: RunHooks<'_>) -> Result<RunOutput, PipelineError> {
    spec.validate()?;
    let mut records = load_records(&spec.dataset)?;
    if let Some(n) = spec.limit {
        records.truncate(n);
    }
    let templates = template_store(spec.templates_dir.as_deref())?;
    let client = if spec.needs_llm() { Some(spec.llm.build_client()?) } else { None };
    let runner = SessionRunner {
        creditor: &spec.creditor,
        debtor: &spec.debtor,
        engine: &spec.engine,
        client: client.as_ref(),
        templates: &templates,
        label: &spec.label,
    };
    let results = runner.run_all(&records, spec.parallel, hooks)?;
    if let Some(c) = &client {
        c.finish_recording()?;
    }
    let cancelled = results.len() < records.len();
    let failures: Vec<FailureInfo> = results.iter().filter_map(|r| r.outcome.clone().err()).collect();
    let (transcripts, report) = score(&results, &records, spec.exclude_failed, spec)?;
    let out = RunOutput { results, transcripts, failures, report, cancelled };
    if !cancelled {
        write_run(&spec.out, spec, &out, client.as_deref())?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct SampleRow<'a> {
    record_id: &'a str,
    agreed: bool,
    success: bool,
    rr: f64,
    qrd: u32,
    hrd: u32,
    cd: u32,
    l1d: u32,
    l2d: u32,
    atv: f64,
    dc: f64,
    cri: f64,
    dhi: f64,
    cci: f64,
}

/// Per-sample metrics, one row per transcript.
pub fn write_metrics_csv<W: Write>(writer: W, report: &MetricsReport, weights: &MetricWeights) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in &report.samples {
        let i = s.indices(weights);
        w.serialize(SampleRow {
            record_id: &s.record_id,
            agreed: s.agreed,
            success: s.success,
            rr: s.rr,
            qrd: s.qrd,
            hrd: s.hrd,
            cd: s.cd,
            l1d: s.l1d,
            l2d: s.l2d,
            atv: s.atv,
            dc: s.dc,
            cri: i.cri,
            dhi: i.dhi,
            cci: i.cci,
        })?;
    }
    w.flush().map_err(|e| PipelineError::io(Path::new("metrics.csv"), e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

#[derive(Serialize)]
struct SidecarRow<'a> {
    record_id: &'a str,
    #[serde(flatten)]
    entry: &'a SidecarEntry,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    label: &'a str,
    records: usize,
    scored: usize,
    failed: usize,
    excluded: usize,
    spec: &'a RunSpec,
    failures: &'a [FailureInfo],
    report: Option<&'a MetricsReport>,
}

/// Output layout:
/// `transcripts/<id>.json`, `metrics.csv`, `summary.csv`, `report.json`,
/// `sidecar.jsonl`, `warnings.jsonl` and, with an LLM client, `calls.jsonl`.
pub fn write_run(dir: &Path, spec: &RunSpec, out: &RunOutput, client: Option<&LlmClient>) -> Result<(), PipelineError> {
    let tdir = dir.join("transcripts");
    std::fs::create_dir_all(&tdir).map_err(|e| PipelineError::io(&tdir, e))?;
    for t in &out.transcripts {
        write_json(&tdir.join(format!("{}.json", t.record_id)), t)?;
    }
    if let Some(report) = &out.report {
        let path = dir.join("metrics.csv");
        let f = File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
        write_metrics_csv(BufWriter::new(f), report, &spec.metrics)?;
        let path = dir.join("summary.csv");
        let f = File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
        write_summary_csv(BufWriter::new(f), &[(spec.label.as_str(), report)])?;
    }
    write_json(
        &dir.join("report.json"),
        &RunManifest {
            label: &spec.label,
            records: out.results.len(),
            scored: out.transcripts.len(),
            failed: out.failures.len(),
            excluded: out.excluded(),
            spec,
            failures: &out.failures,
            report: out.report.as_ref(),
        },
    )?;
    write_jsonl(
        &dir.join("sidecar.jsonl"),
        out.results.iter().flat_map(|r| r.sidecar.iter().map(|entry| SidecarRow { record_id: &r.record_id, entry })),
    )?;
    write_jsonl(
        &dir.join("warnings.jsonl"),
        out.results.iter().flat_map(|r| r.warnings.iter().map(|w| serde_json::json!({"record_id": r.record_id, "warning": w}))),
    )?;
    if let Some(c) = client {
        let mut ledger = c.call_ledger();
        ledger.sort_by(|a, b| (&a.tag.session, a.tag.turn, a.seq).cmp(&(&b.tag.session, b.tag.turn, b.seq)));
        write_jsonl(&dir.join("calls.jsonl"), ledger)?;
    }
    Ok(())
}

/// Reads transcripts written by [`write_run`].
pub fn read_transcripts(dir: &Path) -> Result<Vec<Transcript>, PipelineError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
            serde_json::from_str(&text).map_err(PipelineError::from)
        })
        .collect()
}
