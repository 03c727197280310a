use std::path::{Path, PathBuf};
use std::time::Instant;

use dcn_agents::{AgentSpec, DebtorPolicySpec};
use dcn_core::datagen::{generate, write_split, GenSpec};
use dcn_llm::{Cassette, CassetteMode, ChatRequest, RequestTag};
use dcn_pipeline::sampling::default_styles;
use dcn_pipeline::{
    load_records, run_benchmark, run_export, run_sampling, ExportMode, ExportSpec, Filter1, LlmSettings, Provider, RunHooks,
    RunSpec, SampleSpec,
};

fn dataset(dir: &Path, n: usize) -> PathBuf {
    let spec = GenSpec { n_total: n, test_fraction: 0.5, seed: 11, ..GenSpec::default() };
    write_split(dir, &spec, &generate(&spec).unwrap()).unwrap();
    dir.join("test.jsonl")
}

fn scripted_spec(data: PathBuf, out: PathBuf) -> RunSpec {
    let toml = format!(
        r#"
dataset = "{}"
out = "{}"
label = "scripted"
[creditor]
kind = "scripted_creditor"
[debtor]
kind = "scripted_debtor"
policy = "reservation"
[debtor.reservation]
inst_prds = 12
pmt_ratio = 0.15
"#,
        data.display(),
        out.display()
    );
    toml::from_str(&toml).unwrap()
}

fn llm_spec(data: PathBuf, out: PathBuf, cassette: &str) -> RunSpec {
    let mut spec = scripted_spec(data, out);
    spec.label = "maden".into();
    spec.creditor = AgentSpec::Maden { template: "creditor_standard".into(), config: Default::default() };
    spec.debtor = AgentSpec::Llm { template: "debtor_standard".into() };
    spec.llm = LlmSettings { provider: Provider::Simulated, cassette: Some(cassette.into()), ..Default::default() };
    spec
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn scripted_benchmark_is_fast_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 20);
    let a = scripted_spec(data.clone(), tmp.path().join("a"));
    let b = RunSpec { out: tmp.path().join("b"), parallel: 1, ..a.clone() };
    let start = Instant::now();
    let out = run_benchmark(&a, RunHooks::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    run_benchmark(&b, RunHooks::default()).unwrap();
    assert_eq!(out.transcripts.len(), 10);
    assert!(out.failures.is_empty());
    let ids: Vec<_> = out.transcripts.iter().map(|t| t.record_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(read_dir_sorted(&a.out.join("transcripts")), read_dir_sorted(&b.out.join("transcripts")));
    for f in ["metrics.csv", "summary.csv", "sidecar.jsonl"] {
        assert_eq!(std::fs::read(a.out.join(f)).unwrap(), std::fs::read(b.out.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("record_id,agreed,success,rr,"));
}

#[test]
fn recorded_run_replays_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 12);
    let cassette = tmp.path().join("cassette.jsonl");
    let rec = llm_spec(data.clone(), tmp.path().join("rec"), &format!("record:{}", cassette.display()));
    let recorded = run_benchmark(&rec, RunHooks::default()).unwrap();
    assert!(recorded.failures.is_empty(), "{:?}", recorded.failures);

    let replay = |out: &str| {
        let spec = RunSpec { out: tmp.path().join(out), ..llm_spec(data.clone(), PathBuf::new(), &format!("replay:{}", cassette.display())) };
        run_benchmark(&spec, RunHooks::default()).unwrap();
        spec.out
    };
    let (x, y) = (replay("x"), replay("y"));
    for dir in [&x, &y] {
        assert_eq!(read_dir_sorted(&rec.out.join("transcripts")), read_dir_sorted(&dir.join("transcripts")));
        assert_eq!(std::fs::read(rec.out.join("metrics.csv")).unwrap(), std::fs::read(dir.join("metrics.csv")).unwrap());
    }
    let calls = std::fs::read_to_string(x.join("calls.jsonl")).unwrap();
    assert!(calls.lines().all(|l| l.contains("\"source\":\"cassette\"")));
    assert_eq!(calls.lines().filter(|l| l.contains("creditor.plan")).count(), 6);
}

#[test]
fn failed_sessions_are_reported_and_excluded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 8);
    // An empty cassette in replay mode: every LLM call misses.
    let cassette = tmp.path().join("empty.jsonl");
    std::fs::write(&cassette, "").unwrap();
    let mut spec = llm_spec(data, tmp.path().join("out"), &format!("replay:{}", cassette.display()));
    spec.creditor = AgentSpec::ScriptedCreditor { opening: Default::default() };
    let out = run_benchmark(&spec, RunHooks::default()).unwrap();
    assert_eq!(out.failures.len(), 4);
    assert!(out.failures[0].message.contains("cassette miss"));
    assert_eq!(out.excluded(), 4);
    assert!(out.report.is_none());

    spec.exclude_failed = false;
    spec.out = tmp.path().join("kept");
    let out = run_benchmark(&spec, RunHooks::default()).unwrap();
    assert_eq!(out.excluded(), 0);
    let report = out.report.unwrap();
    assert_eq!(report.aggregates.n, 4);
    assert_eq!(report.aggregates.sr, 0.0);
}

#[test]
fn cancellation_skips_remaining_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 20);
    let mut spec = scripted_spec(data, tmp.path().join("out"));
    spec.parallel = 1;
    let cancel = std::sync::atomic::AtomicBool::new(false);
    let progress = |done: usize, _total: usize| {
        if done == 3 {
            cancel.store(true, std::sync::atomic::Ordering::Relaxed);
        }
    };
    let out = run_benchmark(&spec, RunHooks { progress: Some(&progress), cancel: Some(&cancel) }).unwrap();
    assert!(out.cancelled);
    assert_eq!(out.results.len(), 3);
    assert!(!spec.out.join("report.json").exists());
}

fn sample_spec(tmp: &Path, data: PathBuf, cassette: &Path) -> SampleSpec {
    let mut base = llm_spec(data, tmp.join("sample"), &format!("record:{}", cassette.display()));
    base.label = "cand".into();
    SampleSpec { base, styles: default_styles(), filter1: Filter1::default() }
}

#[test]
fn sampling_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 16);
    let cassette = tmp.path().join("cassette.jsonl");
    let spec = sample_spec(tmp.path(), data.clone(), &cassette);
    let first = run_sampling(&spec, RunHooks::default()).unwrap();
    let s = &first.summary;
    assert_eq!(s.candidates + s.failed_sessions, 8 * 3);
    assert!(s.pool <= 8 && s.after_filter1 >= s.pool);
    assert_eq!(s.kept, dcn_pipeline::keep_count(s.pool));
    assert!(s.kept > 0, "{s:?}");

    // Re-running over the saved candidates reproduces every later stage.
    let names = ["filter1.jsonl", "pool.jsonl", "final.jsonl", "sampling.json"];
    let before: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(spec.base.out.join(n)).unwrap()).collect();
    for n in names {
        std::fs::remove_file(spec.base.out.join(n)).unwrap();
    }
    run_sampling(&spec, RunHooks::default()).unwrap();
    let after: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(spec.base.out.join(n)).unwrap()).collect();
    assert_eq!(before[..3], after[..3]);

    let export = |mode: ExportMode, out: &str| ExportSpec {
        input: first.final_path.clone(),
        dataset: data.clone(),
        out: tmp.path().join(out),
        mode,
        seed: 7,
        styles: Default::default(),
        rules: dcn_agents::default_rules(),
        templates_dir: None,
        engine: Default::default(),
        llm: LlmSettings { provider: Provider::Simulated, cassette: Some(format!("record:{}", cassette.display())), ..Default::default() },
    };
    let sft = export(ExportMode::Sft, "sft.jsonl");
    let stats = run_export(&sft).unwrap();
    let creditor_turns: usize =
        first.final_set.iter().map(|c| c.transcript.turns.iter().filter(|t| t.side == dcn_core::domain::Side::Creditor).count()).sum();
    assert_eq!(stats.pairs, creditor_turns);
    let text = std::fs::read_to_string(&sft.out).unwrap();
    let cas = Cassette::open(&cassette, CassetteMode::Replay).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("rejected").is_none() && v.get("chosen").is_none());
        assert!(v["response"].as_str().unwrap().contains("Action:"));
        // The exported context is exactly what the creditor was sent during sampling.
        let messages = serde_json::from_value(v["messages"].clone()).unwrap();
        let req = ChatRequest { messages, ..ChatRequest::new("gpt-4o", vec![], RequestTag::new("x", 1, "x")) };
        assert!(cas.get(&req.canonical_hash()).is_some(), "prompt not reconstructible");
    }

    let dpo = export(ExportMode::Dpo, "dpo.jsonl");
    let stats = run_export(&dpo).unwrap();
    assert!(stats.pairs > 0);
    assert_eq!(stats.pairs + stats.identical + stats.skipped, creditor_turns);
    for line in std::fs::read_to_string(&dpo.out).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_ne!(v["chosen"], v["rejected"]);
    }
    // Identical inputs give identical files.
    let again = ExportSpec { out: tmp.path().join("dpo2.jsonl"), ..dpo.clone() };
    run_export(&again).unwrap();
    assert_eq!(std::fs::read(&dpo.out).unwrap(), std::fs::read(&again.out).unwrap());
    assert_eq!(load_records(&data).unwrap().len(), 8);
}

#[test]
fn spec_files_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.toml");
    std::fs::write(
        &path,
        "dataset = \"data/test.jsonl\"\nout = \"out\"\nparallel = 2\n[debtor]\nkind = \"scripted_debtor\"\npolicy = \"accept_all\"\n[llm]\nprovider = \"simulated\"\nmodel = \"m\"\ncassette = \"replay:c.jsonl\"\n",
    )
    .unwrap();
    let spec = RunSpec::load(&path).unwrap();
    assert_eq!(spec.dataset, tmp.path().join("data/test.jsonl"));
    assert_eq!(spec.llm.client.model, "m");
    assert_eq!(spec.llm.cassette.as_deref(), Some(format!("replay:{}", tmp.path().join("c.jsonl").display()).as_str()));
    assert!(matches!(spec.creditor, AgentSpec::Maden { .. }));
    assert!(matches!(spec.debtor, AgentSpec::ScriptedDebtor { policy: DebtorPolicySpec::AcceptAll, .. }));
}
