//! JSONL store of recorded responses keyed by request hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::request::{ChatRequest, ChatResponse, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Serve hits from the file, call the provider on misses and append them.
    Record,
    /// Serve only from the file; a miss is an error.
    Replay,
    /// Ignore the file.
    Passthrough,
}

impl FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(CassetteMode::Record),
            "replay" => Ok(CassetteMode::Replay),
            "passthrough" => Ok(CassetteMode::Passthrough),
            other => Err(format!("unknown cassette mode `{other}` (record, replay, passthrough)")),
        }
    }
}

impl std::fmt::Display for CassetteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CassetteMode::Record => "record",
            CassetteMode::Replay => "replay",
            CassetteMode::Passthrough => "passthrough",
        })
    }
}

/// Parses `mode:path`, e.g. `replay:fixtures/run.jsonl`.
pub fn parse_cassette_arg(arg: &str) -> Result<(CassetteMode, PathBuf), String> {
    let (mode, path) = arg.split_once(':').ok_or_else(|| format!("expected mode:path, got `{arg}`"))?;
    if path.is_empty() {
        return Err("cassette path is empty".into());
    }
    Ok((mode.parse()?, PathBuf::from(path)))
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette io on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cassette {path} line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub tag: String,
    pub model: String,
    pub messages: usize,
    /// Start of the last user message.
    pub excerpt: String,
}

impl RequestSummary {
    pub fn of(req: &ChatRequest) -> Self {
        let last_user = req.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("");
        RequestSummary {
            tag: req.tag.to_string(),
            model: req.model.clone(),
            messages: req.messages.len(),
            excerpt: last_user.chars().take(160).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub hash: String,
    pub request: RequestSummary,
    pub response: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub prompt_tokens: u32,
    #[serde(default)]
    pub completion_tokens: u32,
}

impl CassetteEntry {
    pub fn to_response(&self) -> ChatResponse {
        ChatResponse {
            text: self.response.clone(),
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
        }
    }
}

#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    mode: CassetteMode,
    entries: HashMap<String, CassetteEntry>,
}

impl Cassette {
    /// Opens a cassette. Replay requires the file; record creates it on first write.
    pub fn open(path: impl AsRef<Path>, mode: CassetteMode) -> Result<Self, CassetteError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let io = |e: std::io::Error| CassetteError::Io { path: path.clone(), message: e.to_string() };
        match File::open(&path) {
            Ok(file) => {
                for (i, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(io)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| CassetteError::Line {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    entries.entry(entry.hash.clone()).or_insert(entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode != CassetteMode::Replay => {}
            Err(e) => return Err(io(e)),
        }
        Ok(Cassette { path, mode, entries })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: &str) -> Option<&CassetteEntry> {
        self.entries.get(hash)
    }

    /// Stores an entry and appends it to the file. Existing hashes are kept.
    pub fn insert(&mut self, entry: CassetteEntry) -> Result<(), CassetteError> {
        if self.entries.contains_key(&entry.hash) {
            return Ok(());
        }
        let io = |e: std::io::Error| CassetteError::Io { path: self.path.clone(), message: e.to_string() };
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(file, "{line}").map_err(io)?;
        self.entries.insert(entry.hash.clone(), entry);
        Ok(())
    }

    /// Rewrites the file ordered by tag then hash, so recordings made by
    /// parallel runs diff cleanly.
    pub fn rewrite_sorted(&self) -> Result<(), CassetteError> {
        let mut entries: Vec<&CassetteEntry> = self.entries.values().collect();
        entries.sort_by(|a, b| (&a.request.tag, &a.hash).cmp(&(&b.request.tag, &b.hash)));
        let mut out = String::new();
        for e in entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(&self.path, out).map_err(|e| CassetteError::Io { path: self.path.clone(), message: e.to_string() })
    }
}
