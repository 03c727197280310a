//! Export over a committed fixture: a sampled set of five records and the
//! cassette holding every call needed to rebuild it and its rejected turns.
//! `DCN_RECORD_FIXTURES=1` re-records with the simulated provider.

use std::path::{Path, PathBuf};

use dcn_core::datagen::{generate, GenSpec};
use dcn_core::domain::write_records;
use dcn_pipeline::sampling::default_styles;
use dcn_pipeline::{run_export, run_sampling, ExportMode, ExportSpec, Filter1, LlmSettings, Provider, RunHooks, RunSpec, SampleSpec};

/// Pinned by the committed fixture.
const SFT_PAIRS: usize = 8;
const DPO_PAIRS: usize = 3;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/export5")
}

fn llm(cassette: &str) -> LlmSettings {
    LlmSettings { provider: Provider::Simulated, cassette: Some(cassette.into()), ..Default::default() }
}

fn record(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let split = generate(&GenSpec { n_total: 10, test_fraction: 0.5, seed: 505, ..GenSpec::default() }).unwrap();
    write_records(std::fs::File::create(dir.join("records.jsonl")).unwrap(), &split.test).unwrap();
    let cassette = dir.join("cassette.jsonl");
    let _ = std::fs::remove_file(&cassette);
    let tmp = tempfile::tempdir().unwrap();
    let base: RunSpec = serde_json::from_value(serde_json::json!({
        "dataset": dir.join("records.jsonl"),
        "out": tmp.path().join("sample"),
        "label": "cand",
    }))
    .unwrap();
    let spec = SampleSpec { base: RunSpec { llm: llm(&format!("record:{}", cassette.display())), ..base }, styles: default_styles(), filter1: Filter1::default() };
    let out = run_sampling(&spec, RunHooks::default()).unwrap();
    std::fs::copy(&out.final_path, dir.join("final.jsonl")).unwrap();
    let dpo = export_spec(dir, tmp.path().join("dpo.jsonl"), ExportMode::Dpo, &format!("record:{}", cassette.display()));
    run_export(&dpo).unwrap();
}

fn export_spec(dir: &Path, out: PathBuf, mode: ExportMode, cassette: &str) -> ExportSpec {
    ExportSpec {
        input: dir.join("final.jsonl"),
        dataset: dir.join("records.jsonl"),
        out,
        mode,
        seed: 7,
        styles: Default::default(),
        rules: dcn_agents::default_rules(),
        templates_dir: None,
        engine: Default::default(),
        llm: llm(cassette),
    }
}

#[test]
fn fixture_exports_known_pair_counts() {
    let dir = fixture();
    if std::env::var_os("DCN_RECORD_FIXTURES").is_some() {
        record(&dir);
    }
    let replay = format!("replay:{}", dir.join("cassette.jsonl").display());
    let tmp = tempfile::tempdir().unwrap();

    let sft = export_spec(&dir, tmp.path().join("sft.jsonl"), ExportMode::Sft, &replay);
    let stats = run_export(&sft).unwrap();
    assert_eq!(stats.pairs, SFT_PAIRS);
    let lines = std::fs::read_to_string(&sft.out).unwrap();
    assert_eq!(lines.lines().count(), SFT_PAIRS);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["messages", "response"]);
    }

    let dpo = export_spec(&dir, tmp.path().join("dpo.jsonl"), ExportMode::Dpo, &replay);
    let stats = run_export(&dpo).unwrap();
    assert_eq!(stats.skipped, 0, "every rejected turn is in the cassette");
    assert_eq!(stats.pairs, DPO_PAIRS);
    assert_eq!(stats.pairs + stats.identical, SFT_PAIRS);
    for l in std::fs::read_to_string(&dpo.out).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["chosen", "messages", "rejected"]);
        assert_ne!(v["chosen"], v["rejected"]);
    }
}
