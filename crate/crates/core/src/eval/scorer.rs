//! Quality metrics computed by external programs.
//!
//! A scorer is a command line. It is run once per utterance with two extra
//! arguments, the reference and the synthesized WAV paths, and must print its
//! score as the last non-empty line of standard output. A scorer whose
//! program cannot be found yields "not evaluated"; nothing is ever made up.

use std::path::Path;
use std::process::Command;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalScorer {
    /// Metric name as it appears in reports.
    pub metric: String,
    pub program: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScoreOutcome {
    Scored(f64),
    NotEvaluated(String),
}

impl ExternalScorer {
    /// Parses `metric=program arg...`, splitting the command on whitespace.
    pub fn parse(spec: &str) -> Result<Self> {
        let (metric, cmd) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("scorer `{spec}` is not of the form metric=command")))?;
        let mut words = cmd.split_whitespace().map(str::to_string);
        let program = words
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("scorer `{metric}` has an empty command")))?;
        if metric.trim().is_empty() {
            return Err(Error::InvalidInput(format!("scorer `{spec}` has an empty metric name")));
        }
        Ok(Self {
            metric: metric.trim().to_string(),
            program,
            args: words.collect(),
        })
    }

    pub fn score(&self, reference: &Path, synthesized: &Path) -> Result<ScoreOutcome> {
        let out = match Command::new(&self.program).args(&self.args).arg(reference).arg(synthesized).output() {
            Ok(o) => o,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(ScoreOutcome::NotEvaluated(format!("scorer program `{}` not found", self.program)));
            }
            Err(e) => return Err(Error::Scorer(format!("{}: {e}", self.metric))),
        };
        if !out.status.success() {
            let err = String::from_utf8_lossy(&out.stderr);
            return Err(Error::Scorer(format!("{} exited with {}: {}", self.metric, out.status, err.trim())));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
        last.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ScoreOutcome::Scored)
            .ok_or_else(|| Error::Scorer(format!("{}: cannot read a score from `{last}`", self.metric)))
    }
}
