use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcn_core::datagen::{generate, write_split, GenSpec};
use dcn_core::domain::{DimensionKey, DimensionValue, NegotiationOutcome, TerminationReason, Transcript};
use dcn_core::metrics::{evaluate_dataset, evaluate_sample, read_ds_csv, write_summary_csv, MetricWeights};
use dcn_core::projection::ProjectionConfig;
use dcn_pipeline::{
    load_records, read_transcripts, run_benchmark, run_export, run_sampling, write_metrics_csv, write_trajectory_csv, ExportMode,
    ExportSpec, RunHooks, RunSpec, SampleSpec,
};
use dcn_server::ServerConfig;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "dcn", version, about = "Debt collection negotiation benchmark")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML file for the chosen command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of gen-data and export.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `record:<path>`, `replay:<path>` or `passthrough`.
    #[arg(long, global = true, value_name = "MODE:PATH")]
    cassette: Option<String>,
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Output directory (a file for `project` and `export`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test split.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Run a benchmark from a run spec.
    Run {
        #[arg(long)]
        limit: Option<usize>,
        /// Use the built-in rule-based responder instead of the HTTP endpoint.
        #[arg(long)]
        simulated: bool,
    },
    /// Score saved transcripts.
    Metrics {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "run")]
        label: String,
        /// `record_id,ds` annotations to attach.
        #[arg(long)]
        ds: Option<PathBuf>,
    },
    /// Write the asset trajectory of one record as CSV.
    Project {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        record: String,
        /// Take the terms from a saved transcript.
        #[arg(long, conflicts_with_all = ["disc_ratio", "pmt_ratio", "pmt_days", "inst_prds"])]
        transcript: Option<PathBuf>,
        #[arg(long, requires_all = ["pmt_ratio", "pmt_days", "inst_prds"])]
        disc_ratio: Option<f64>,
        #[arg(long)]
        pmt_ratio: Option<f64>,
        #[arg(long)]
        pmt_days: Option<u32>,
        #[arg(long)]
        inst_prds: Option<u32>,
    },
    /// Generate candidates per style and filter them.
    Sample {
        #[arg(long)]
        simulated: bool,
    },
    /// Write sft or dpo training files from a sampled set.
    Export {
        #[arg(long)]
        mode: Option<ExportMode>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<std::net::SocketAddr>,
        /// Records to serve when no config is given.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

/// Projection and metric settings for `metrics` and `project`.
#[derive(Default, Deserialize)]
#[serde(default)]
struct EvalConfig {
    projection: ProjectionConfig,
    metrics: MetricWeights,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn need_config(g: &Global, cmd: &str) -> Result<PathBuf> {
    g.config.clone().with_context(|| format!("`{cmd}` needs --config <file>"))
}

fn progress(done: usize, total: usize) {
    if done == total || done.is_multiple_of(10) {
        eprintln!("{done}/{total} sessions");
    }
}

fn gen_data(g: &Global, n: Option<usize>, test_fraction: Option<f64>) -> Result<()> {
    let mut spec: GenSpec = match &g.config {
        Some(p) => read_toml(p)?,
        None => GenSpec::default(),
    };
    spec.seed = g.seed.unwrap_or(spec.seed);
    spec.n_total = n.unwrap_or(spec.n_total);
    spec.test_fraction = test_fraction.unwrap_or(spec.test_fraction);
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let split = generate(&spec)?;
    write_split(&out, &spec, &split)?;
    println!("wrote {} train and {} test records to {}", split.train.len(), split.test.len(), out.display());
    Ok(())
}

fn apply_run_overrides(g: &Global, spec: &mut RunSpec, simulated: bool) {
    if let Some(p) = g.parallel {
        spec.parallel = p;
    }
    if let Some(o) = &g.out {
        spec.out = o.clone();
    }
    if let Some(c) = &g.cassette {
        spec.llm.cassette = Some(c.clone());
    }
    if simulated {
        spec.llm.provider = dcn_pipeline::Provider::Simulated;
    }
}

fn run(g: &Global, limit: Option<usize>, simulated: bool) -> Result<()> {
    let mut spec = RunSpec::load(&need_config(g, "run")?)?;
    apply_run_overrides(g, &mut spec, simulated);
    spec.limit = limit.or(spec.limit);
    let out = run_benchmark(&spec, RunHooks { progress: Some(&progress), cancel: None })?;
    for f in &out.failures {
        eprintln!("failed {}: {} in round {}: {}", f.record_id, f.side, f.round, f.message);
    }
    match &out.report {
        Some(r) => {
            write_summary_csv(std::io::stdout().lock(), &[(spec.label.as_str(), r)])?;
            println!("results in {}", spec.out.display());
        }
        None => bail!("no session finished; nothing to score"),
    }
    Ok(())
}

fn metrics(g: &Global, transcripts: &Path, dataset: &Path, label: &str, ds: Option<&Path>) -> Result<()> {
    let cfg: EvalConfig = match &g.config {
        Some(p) => read_toml(p)?,
        None => EvalConfig::default(),
    };
    let ts = read_transcripts(transcripts)?;
    let records = load_records(dataset)?;
    let mut report = evaluate_dataset(&ts, &records, &cfg.projection, &cfg.metrics)?;
    if let Some(p) = ds {
        report.attach_ds(&read_ds_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?);
    }
    match &g.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?), &report, &cfg.metrics)?;
            write_summary_csv(BufWriter::new(File::create(dir.join("summary.csv"))?), &[(label, &report)])?;
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            println!("wrote metrics for {} transcripts to {}", ts.len(), dir.display());
        }
        None => write_summary_csv(std::io::stdout().lock(), &[(label, &report)])?,
    }
    Ok(())
}

fn outcome_from_flags(disc: f64, pmt: f64, days: u32, months: u32) -> Result<NegotiationOutcome> {
    let mut terms = BTreeMap::new();
    for (k, v) in [
        (DimensionKey::DiscRatio, serde_json::json!(disc)),
        (DimensionKey::PmtRatio, serde_json::json!(pmt)),
        (DimensionKey::PmtDays, serde_json::json!(days)),
        (DimensionKey::InstPrds, serde_json::json!(months)),
    ] {
        terms.insert(k, DimensionValue::from_json(k, &v)?);
    }
    Ok(NegotiationOutcome::new(terms)?)
}

#[allow(clippy::too_many_arguments)]
fn project(
    g: &Global,
    dataset: &Path,
    record_id: &str,
    transcript: Option<&Path>,
    disc: Option<f64>,
    pmt: Option<f64>,
    days: Option<u32>,
    months: Option<u32>,
) -> Result<()> {
    let cfg: EvalConfig = match &g.config {
        Some(p) => read_toml(p)?,
        None => EvalConfig::default(),
    };
    let record = load_records(dataset)?
        .into_iter()
        .find(|r| r.record_id() == record_id)
        .with_context(|| format!("record {record_id} not in {}", dataset.display()))?;
    let t = match (transcript, disc, pmt, days, months) {
        (Some(p), ..) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        (None, Some(d), Some(r), Some(t), Some(m)) => Transcript {
            record_id: record_id.into(),
            turns: vec![],
            outcome: Some(outcome_from_flags(d, r, t, m)?),
            terminated_reason: TerminationReason::Agreement,
        },
        _ => Transcript { record_id: record_id.into(), turns: vec![], outcome: None, terminated_reason: TerminationReason::MaxTurns },
    };
    let eval = evaluate_sample(&t, &record, &cfg.projection, &cfg.metrics)?;
    let m = &eval.metrics;
    eprintln!("success={} rr={:.4} qrd={} hrd={} cd={} l1d={} l2d={} atv={:.4}", m.success, m.rr, m.qrd, m.hrd, m.cd, m.l1d, m.l2d, m.atv);
    match &g.out {
        Some(p) => write_trajectory_csv(BufWriter::new(File::create(p)?), &eval.trajectory)?,
        None => write_trajectory_csv(std::io::stdout().lock(), &eval.trajectory)?,
    }
    Ok(())
}

fn sample(g: &Global, simulated: bool) -> Result<()> {
    let mut spec = SampleSpec::load(&need_config(g, "sample")?)?;
    apply_run_overrides(g, &mut spec.base, simulated);
    let out = run_sampling(&spec, RunHooks { progress: Some(&progress), cancel: None })?;
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    println!("final set in {}", out.final_path.display());
    Ok(())
}

fn export(g: &Global, mode: Option<ExportMode>) -> Result<()> {
    let mut spec = ExportSpec::load(&need_config(g, "export")?)?;
    spec.mode = mode.unwrap_or(spec.mode);
    spec.seed = g.seed.unwrap_or(spec.seed);
    if let Some(o) = &g.out {
        spec.out = o.clone();
    }
    if let Some(c) = &g.cassette {
        spec.llm.cassette = Some(c.clone());
    }
    let stats = run_export(&spec)?;
    println!(
        "wrote {} pairs to {} ({} skipped, {} identical)",
        stats.pairs,
        spec.out.display(),
        stats.skipped,
        stats.identical
    );
    Ok(())
}

fn serve(g: &Global, addr: Option<std::net::SocketAddr>, dataset: Option<PathBuf>) -> Result<()> {
    let mut cfg = match (&g.config, dataset) {
        (Some(p), _) => ServerConfig::load(p)?,
        (None, Some(d)) => ServerConfig::new(d),
        (None, None) => bail!("`serve` needs --config <file> or --dataset <file>"),
    };
    if let Some(a) = addr {
        cfg.addr = a;
    }
    if let Some(c) = &g.cassette {
        cfg.llm.cassette = Some(c.clone());
    }
    if let Some(o) = &g.out {
        cfg.data_dir = Some(o.clone());
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(dcn_server::serve(cfg)).map_err(|e| anyhow::anyhow!(e))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let g = &cli.global;
    match cli.command {
        Command::GenData { n, test_fraction } => gen_data(g, n, test_fraction),
        Command::Run { limit, simulated } => run(g, limit, simulated),
        Command::Metrics { transcripts, dataset, label, ds } => metrics(g, &transcripts, &dataset, &label, ds.as_deref()),
        Command::Project { dataset, record, transcript, disc_ratio, pmt_ratio, pmt_days, inst_prds } => {
            project(g, &dataset, &record, transcript.as_deref(), disc_ratio, pmt_ratio, pmt_days, inst_prds)
        }
        Command::Sample { simulated } => sample(g, simulated),
        Command::Export { mode } => export(g, mode),
        Command::Serve { addr, dataset } => serve(g, addr, dataset),
    }?;
    std::io::stdout().flush()?;
    Ok(())
}
