use std::path::{Path, PathBuf};
use std::sync::Arc;

use dcn_agents::{AgentSpec, SimulatedLlm, TemplateStore};
use dcn_core::engine::EngineConfig;
use dcn_core::metrics::MetricWeights;
use dcn_core::projection::ProjectionConfig;
use dcn_llm::{parse_cassette_arg, Cassette, CassetteMode, ClientConfig, HttpTransport, LlmClient, Transport};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// Chat-completions endpoint named by the environment.
    #[default]
    Http,
    /// The built-in rule-based responder; no network.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub provider: Provider,
    /// `record:<path>`, `replay:<path>` or `passthrough`.
    pub cassette: Option<String>,
    #[serde(flatten)]
    pub client: ClientConfig,
}

impl LlmSettings {
    pub fn cassette(&self) -> Result<Option<(CassetteMode, PathBuf)>, PipelineError> {
        match self.cassette.as_deref() {
            None | Some("passthrough") => Ok(None),
            Some(arg) => parse_cassette_arg(arg).map(Some).map_err(PipelineError::Config),
        }
    }

    pub fn build_client(&self) -> Result<Arc<LlmClient>, PipelineError> {
        let transport: Arc<dyn Transport> = match self.provider {
            Provider::Http => Arc::new(HttpTransport::from_env()),
            Provider::Simulated => Arc::new(SimulatedLlm),
        };
        let client = match self.cassette()? {
            None | Some((CassetteMode::Passthrough, _)) => LlmClient::new(self.client.clone(), transport),
            Some((CassetteMode::Replay, path)) => LlmClient::replay(self.client.clone(), Cassette::open(path, CassetteMode::Replay)?),
            Some((CassetteMode::Record, path)) => {
                LlmClient::with_cassette(self.client.clone(), transport, Cassette::open(path, CassetteMode::Record)?)
            }
        };
        Ok(Arc::new(client))
    }

    pub fn resolve(&mut self, base: &Path) {
        if let Ok(Some((mode, path))) = self.cassette() {
            self.cassette = Some(format!("{mode}:{}", base.join(path).display()));
        }
    }
}

fn default_parallel() -> usize {
    4
}

fn default_true() -> bool {
    true
}

/// One benchmark run: a dataset, two agents and where to put the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default = "default_creditor")]
    pub creditor: AgentSpec,
    #[serde(default = "default_debtor")]
    pub debtor: AgentSpec,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    /// Only the first `limit` records (by id).
    #[serde(default)]
    pub limit: Option<usize>,
    /// Failed sessions are left out of N; otherwise they count as no agreement.
    #[serde(default = "default_true")]
    pub exclude_failed: bool,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub llm: LlmSettings,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub metrics: MetricWeights,
}

fn default_creditor() -> AgentSpec {
    AgentSpec::Maden { template: "creditor_standard".into(), config: Default::default() }
}

fn default_debtor() -> AgentSpec {
    AgentSpec::Llm { template: "debtor_standard".into() }
}

fn default_label() -> String {
    "run".into()
}

impl RunSpec {
    /// Reads a TOML spec; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut spec: RunSpec = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        spec.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn resolve(&mut self, base: &Path) {
        self.dataset = base.join(&self.dataset);
        self.out = base.join(&self.out);
        if let Some(t) = &self.templates_dir {
            self.templates_dir = Some(base.join(t));
        }
        self.llm.resolve(base);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.parallel == 0 {
            return Err(PipelineError::Config("parallel must be >= 1".into()));
        }
        self.engine.validate().map_err(PipelineError::Config)?;
        self.projection.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn needs_llm(&self) -> bool {
        self.creditor.needs_llm() || self.debtor.needs_llm()
    }
}

/// Built-in templates plus any found in `dir`.
pub fn template_store(dir: Option<&Path>) -> Result<TemplateStore, PipelineError> {
    let mut store = TemplateStore::default();
    if let Some(dir) = dir {
        store.load_dir(dir)?;
    }
    Ok(store)
}
