//! Checks that corpus PSR ranks system pairs the way listening tests did.
//!
//! # Pairs file
//!
//! Tab-separated with a header line, one comparison per row:
//!
//! ```text
//! system_a <TAB> mushra_a <TAB> manifest_a <TAB> system_b <TAB> mushra_b <TAB> manifest_b
//! ```
//!
//! Each manifest lists a system's audio with the reference phonemes it was
//! asked to say. Relative manifest paths resolve against the pairs file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{load_utterances, psr_corpus, EvalUtterance, PhonemeRecognizer};
use crate::config::AudioConfig;
use crate::dataio::load_manifest;
use crate::error::{Error, Result};

/// One system's audio, references and mean listening-test score.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSamples {
    pub id: String,
    pub mushra: f64,
    pub utterances: Vec<EvalUtterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MushraPair {
    pub a: SystemSamples,
    pub b: SystemSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOutcome {
    pub system_a: String,
    pub system_b: String,
    pub mushra_a: f64,
    pub mushra_b: f64,
    pub psr_a: f64,
    pub psr_b: f64,
    /// The system listeners preferred has the strictly lower PSR.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MushraValidation {
    pub accuracy: f64,
    pub outcomes: Vec<PairOutcome>,
    /// Pairs with equal listening scores, which carry no ranking.
    pub skipped: Vec<(String, String)>,
}

/// Fraction of pairs where the higher-rated system has the lower corpus PSR.
/// A PSR tie counts as a failure.
pub fn validate_against_mushra(pairs: &[MushraPair], recognizer: &dyn PhonemeRecognizer) -> Result<MushraValidation> {
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for p in pairs {
        for s in [&p.a, &p.b] {
            if !(0.0..=100.0).contains(&s.mushra) {
                return Err(Error::InvalidInput(format!("system {}: MUSHRA score {} outside [0, 100]", s.id, s.mushra)));
            }
        }
        if p.a.mushra == p.b.mushra {
            skipped.push((p.a.id.clone(), p.b.id.clone()));
            continue;
        }
        let score = |s: &SystemSamples| {
            psr_corpus(&s.utterances, recognizer)
                .map(|r| r.mean)
                .map_err(|e| Error::InvalidInput(format!("system {}: {e}", s.id)))
        };
        let (psr_a, psr_b) = (score(&p.a)?, score(&p.b)?);
        let success = if p.a.mushra > p.b.mushra { psr_a < psr_b } else { psr_b < psr_a };
        outcomes.push(PairOutcome {
            system_a: p.a.id.clone(),
            system_b: p.b.id.clone(),
            mushra_a: p.a.mushra,
            mushra_b: p.b.mushra,
            psr_a,
            psr_b,
            success,
        });
    }
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no pair with distinct MUSHRA scores to validate".into()));
    }
    let hits = outcomes.iter().filter(|o| o.success).count();
    Ok(MushraValidation {
        accuracy: hits as f64 / outcomes.len() as f64,
        outcomes,
        skipped,
    })
}

pub const PAIRS_HEADER: [&str; 6] = ["system_a", "mushra_a", "manifest_a", "system_b", "mushra_b", "manifest_b"];

/// Reads a pairs file and every manifest it names. Phonemes are mapped onto
/// the recognizer's `inventory`.
pub fn load_mushra_pairs(path: &Path, inventory: &[String], audio: &AudioConfig) -> Result<Vec<MushraPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split('\t').map(str::trim).eq(PAIRS_HEADER) => {}
        _ => return Err(bad(1, format!("expected header `{}`", PAIRS_HEADER.join("\t")))),
    }
    let mut cache: HashMap<PathBuf, Vec<EvalUtterance>> = HashMap::new();
    let mut system = |id: &str, score: &str, manifest: &str, line: usize| -> Result<SystemSamples> {
        let mushra: f64 = score.parse().map_err(|_| bad(line, format!("bad MUSHRA score `{score}`")))?;
        let m = base.join(manifest);
        if !cache.contains_key(&m) {
            let utts = load_utterances(&load_manifest(&m, audio)?, inventory)?;
            cache.insert(m.clone(), utts);
        }
        Ok(SystemSamples {
            id: id.to_string(),
            mushra,
            utterances: cache[&m].clone(),
        })
    };
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad(i + 1, format!("expected 6 fields, got {}", f.len())));
        }
        pairs.push(MushraPair {
            a: system(f[0], f[1], f[2], i + 1)?,
            b: system(f[3], f[4], f[5], i + 1)?,
        });
    }
    Ok(pairs)
}
