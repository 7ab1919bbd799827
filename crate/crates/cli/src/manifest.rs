//! One JSON line per command execution, appended to `manifest.jsonl` next to
//! the command's primary output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use bpstory::Error;

use crate::config::{self, Config};

pub const FILE_NAME: &str = "manifest.jsonl";

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub category: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Absent when the configuration itself failed to load.
    pub config_hash: Option<String>,
    pub config: Option<Config>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub versions: BTreeMap<String, String>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects paths and component versions while a command runs.
pub struct Recorder {
    command: String,
    started_at: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
}

impl Recorder {
    pub fn new(command: &str, seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("bpstory".into(), bpstory::VERSION.into());
        versions.insert("bpstory-cli".into(), env!("CARGO_PKG_VERSION").into());
        Self {
            command: command.into(),
            started_at: now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            versions,
            seed,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.to_path_buf());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.to_path_buf());
    }

    pub fn version(&mut self, component: &str, v: impl Into<String>) {
        self.versions.insert(component.into(), v.into());
    }

    pub fn finish(self, cfg: Option<&Config>, outcome: Result<(), &Error>) -> RunManifest {
        RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            config_hash: cfg.map(config::hash),
            config: cfg.cloned(),
            inputs: self.inputs,
            outputs: self.outputs,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: now(),
            versions: self.versions,
            status: if outcome.is_ok() { "ok" } else { "error" },
            error: outcome.err().map(|e| ErrorRecord {
                category: e.category().into(),
                message: e.to_string(),
            }),
        }
    }
}

pub fn append(dir: &Path, m: &RunManifest) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(FILE_NAME);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
    writeln!(f, "{}", serde_json::to_string(m).expect("manifest serializes"))?;
    Ok(path)
}
