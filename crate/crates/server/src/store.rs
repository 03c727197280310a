//! Append-only JSONL event log, one file per session.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use dcn_agents::AgentSpec;
use dcn_core::domain::TurnRecord;
use dcn_core::engine::SidecarEntry;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created { record_id: String, debtor: AgentSpec, at_ms: u64 },
    Turn { turn: TurnRecord, at_ms: u64 },
    Note { entry: SidecarEntry },
    Closed { at_ms: u64 },
}

/// Without a directory the store keeps nothing.
#[derive(Debug, Clone, Default)]
pub struct EventStore {
    dir: Option<PathBuf>,
}

impl EventStore {
    pub fn new(dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(EventStore { dir })
    }

    fn path(&self, session_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{session_id}.jsonl")))
    }

    pub fn append(&self, session_id: &str, events: &[Event]) -> std::io::Result<()> {
        let Some(path) = self.path(session_id) else { return Ok(()) };
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        f.write_all(&buf)?;
        f.flush()
    }

    /// Every stored session, sorted by id. Unreadable lines end that
    /// session's log (a torn final write is expected after a crash).
    pub fn load_all(&self) -> std::io::Result<Vec<(String, Vec<Event>)>> {
        let Some(dir) = &self.dir else { return Ok(vec![]) };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let mut events = Vec::new();
            for line in BufReader::new(File::open(&p)?).lines() {
                match serde_json::from_str(&line?) {
                    Ok(e) => events.push(e),
                    Err(err) => {
                        tracing::warn!(session = %id, error = %err, "stopping at unreadable event");
                        break;
                    }
                }
            }
            out.push((id, events));
        }
        Ok(out)
    }
}
