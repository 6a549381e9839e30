//! Corpus evaluation of a synthesis model and its versioned JSON report.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use super::{
    mean_std, phoneme_indices, psr_corpus, secs, utterance_id, EvalUtterance, ExternalScorer, MelStatsEmbedder,
    PhonemeRecognizer, ScoreOutcome, UtterancePsr,
};
use crate::dataio::wav::{read_wav, write_wav};
use crate::dataio::Manifest;
use crate::error::{Error, Result};
use crate::model::TtsModel;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Metric {
    Secs,
    Psr,
    /// Computed by the external scorer of the same name.
    External(String),
}

impl Metric {
    pub fn name(&self) -> &str {
        match self {
            Metric::Secs => "secs",
            Metric::Psr => "psr",
            Metric::External(n) => n,
        }
    }

    /// Parses a comma-separated list such as `secs,psr,pesq`.
    pub fn parse_list(list: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let m = match name {
                "secs" => Metric::Secs,
                "psr" => Metric::Psr,
                other => Metric::External(other.to_string()),
            };
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("no metrics requested".into()));
        }
        Ok(out)
    }
}

pub struct EvaluateOptions<'a> {
    pub metrics: Vec<Metric>,
    /// Required for `psr`.
    pub recognizer: Option<&'a dyn PhonemeRecognizer>,
    pub scorers: Vec<ExternalScorer>,
    /// Where synthesized audio is written; external scorers need it.
    pub audio_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceRow {
    pub id: String,
    pub speaker: String,
    pub language: String,
    pub synthesized_samples: usize,
    pub scores: BTreeMap<String, ScoreOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psr_detail: Option<UtterancePsr>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub metrics: Vec<String>,
    pub utterances: Vec<UtteranceRow>,
    pub aggregates: BTreeMap<String, Aggregate>,
    /// Percentages of all reference phonemes, reported next to PSR.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psr_deletion_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psr_insertion_rate: Option<f64>,
    /// Metrics with no value at all, with the reason.
    pub not_evaluated: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Synthesizes every manifest entry with `model` and scores it against the
/// recorded audio and reference phonemes.
pub fn evaluate(model: &TtsModel, manifest: &Manifest, opts: &EvaluateOptions) -> Result<EvalReport> {
    if manifest.entries.is_empty() {
        return Err(Error::InvalidInput("evaluation manifest has no entries".into()));
    }
    if opts.metrics.contains(&Metric::Psr) && opts.recognizer.is_none() {
        return Err(Error::InvalidInput("the psr metric needs a phoneme recognizer".into()));
    }
    if let Some(dir) = &opts.audio_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let audio = &model.cfg.audio;
    let mut rows = Vec::new();
    let mut references = Vec::new();
    let mut synthesized = Vec::new();
    for e in &manifest.entries {
        let id = utterance_id(e);
        let with_id = |err: Error| Error::InvalidInput(format!("utterance {id}: {err}"));
        let wav = model.synthesize(&e.phonemes, &e.speaker_id, &e.language_id).map_err(with_id)?;
        if let Some(dir) = &opts.audio_dir {
            write_wav(&dir.join(format!("{id}.wav")), &wav, audio.sample_rate)?;
        }
        rows.push(UtteranceRow {
            id: id.clone(),
            speaker: e.speaker_id.clone(),
            language: e.language_id.clone(),
            synthesized_samples: wav.len(),
            scores: BTreeMap::new(),
            psr_detail: None,
        });
        references.push(read_wav(&e.audio_path)?.0);
        synthesized.push(wav);
    }

    let mut report = EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        metrics: opts.metrics.iter().map(|m| m.name().to_string()).collect(),
        utterances: Vec::new(),
        aggregates: BTreeMap::new(),
        psr_deletion_rate: None,
        psr_insertion_rate: None,
        not_evaluated: BTreeMap::new(),
    };
    for metric in &opts.metrics {
        let name = metric.name().to_string();
        match metric {
            Metric::Secs => {
                let embedder = MelStatsEmbedder::fit(audio, references.iter().map(Vec::as_slice))?;
                for ((row, r), s) in rows.iter_mut().zip(&references).zip(&synthesized) {
                    let v = secs(r, s, &embedder).map_err(|e| Error::InvalidInput(format!("utterance {}: {e}", row.id)))?;
                    row.scores.insert(name.clone(), ScoreOutcome::Scored(v));
                }
            }
            Metric::Psr => {
                let rec = opts.recognizer.expect("checked above");
                let utts = rows
                    .iter()
                    .zip(&manifest.entries)
                    .zip(&synthesized)
                    .map(|((row, e), w)| {
                        Ok(EvalUtterance {
                            id: row.id.clone(),
                            waveform: w.clone(),
                            reference: phoneme_indices(&e.phonemes, rec.phonemes())?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let summary = psr_corpus(&utts, rec)?;
                report.psr_deletion_rate = Some(summary.deletion_rate);
                report.psr_insertion_rate = Some(summary.insertion_rate);
                for (row, u) in rows.iter_mut().zip(summary.utterances) {
                    row.scores.insert(name.clone(), ScoreOutcome::Scored(u.psr));
                    row.psr_detail = Some(u);
                }
            }
            Metric::External(_) => {
                let scorer = opts.scorers.iter().find(|s| s.metric == name);
                for ((row, e), _) in rows.iter_mut().zip(&manifest.entries).zip(&synthesized) {
                    let outcome = match (scorer, &opts.audio_dir) {
                        (None, _) => ScoreOutcome::NotEvaluated(format!("no scorer configured for `{name}`")),
                        (Some(_), None) => ScoreOutcome::NotEvaluated("no directory for synthesized audio".into()),
                        (Some(s), Some(dir)) => s.score(&e.audio_path, &dir.join(format!("{}.wav", row.id)))?,
                    };
                    row.scores.insert(name.clone(), outcome);
                }
            }
        }
        let values: Vec<f64> = rows
            .iter()
            .filter_map(|r| match r.scores.get(&name) {
                Some(ScoreOutcome::Scored(v)) => Some(*v),
                _ => None,
            })
            .collect();
        if values.is_empty() {
            let reason = rows
                .iter()
                .find_map(|r| match r.scores.get(&name) {
                    Some(ScoreOutcome::NotEvaluated(why)) => Some(why.clone()),
                    _ => None,
                })
                .unwrap_or_else(|| "no values".into());
            report.not_evaluated.insert(name, reason);
        } else {
            let (mean, std) = mean_std(&values);
            report.aggregates.insert(
                name,
                Aggregate {
                    mean,
                    std,
                    count: values.len(),
                },
            );
        }
    }
    report.utterances = rows;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_lists() {
        let m = Metric::parse_list("secs, psr,pesq,secs").unwrap();
        assert_eq!(m, vec![Metric::Secs, Metric::Psr, Metric::External("pesq".into())]);
        assert!(Metric::parse_list(" , ").is_err());
    }
}
