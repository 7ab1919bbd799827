//! External reference-based metrics (MAUVE, BLEU, ROUGE, METEOR, CIDEr) run
//! in a separate process.
//!
//! Protocol: the command receives one JSON object on stdin,
//! `{"metric": name, "hypotheses": [str], "references": [[str]]}`, and prints
//! `{"value": number, "versions": {...}}` on stdout. Exit status 3 means a
//! missing dependency; stderr then names what to install.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS: [&str; 5] = ["mauve", "bleu", "rouge", "meteor", "cider"];

pub trait ExternalMetric {
    /// Value and the component versions reported by the implementation.
    fn compute(
        &self,
        which: &str,
        hypotheses: &[String],
        references: &[Vec<String>],
    ) -> Result<(f64, serde_json::Value)>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMetric {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Deserialize)]
struct Reply {
    value: f64,
    #[serde(default)]
    versions: serde_json::Value,
}

impl ExternalMetric for CommandMetric {
    fn compute(
        &self,
        which: &str,
        hypotheses: &[String],
        references: &[Vec<String>],
    ) -> Result<(f64, serde_json::Value)> {
        if !METRICS.contains(&which) {
            return Err(Error::Config(format!("unknown external metric `{which}`")));
        }
        if hypotheses.len() != references.len() {
            return Err(Error::Domain("one reference list per hypothesis required".into()));
        }
        let capability = |requirement: String| Error::Capability {
            metric: which.to_string(),
            requirement,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| capability(format!("cannot run `{}`: {e}", self.program)))?;
        let payload = serde_json::json!({
            "metric": which,
            "hypotheses": hypotheses,
            "references": references,
        });
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(payload.to_string().as_bytes())
            .map_err(|e| Error::Adapter(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| Error::Adapter(e.to_string()))?;
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
        match out.status.code() {
            Some(0) => {}
            Some(3) => return Err(capability(stderr)),
            _ => return Err(Error::Adapter(format!("`{}` failed: {stderr}", self.program))),
        }
        let reply: Reply =
            serde_json::from_slice(&out.stdout).map_err(|e| Error::Adapter(format!("bad metric output: {e}")))?;
        Ok((reply.value, reply.versions))
    }
}
