//! Objective evaluation: speaker similarity, phoneme substitution rate, its
//! validation against listening-test rankings, and external quality scorers.

pub mod align;
pub mod ctc;
pub mod mushra;
pub mod recognizer;
pub mod report;
pub mod scorer;
pub mod secs;

use serde::Serialize;

use crate::dataio::wav::read_wav;
use crate::dataio::{Manifest, ManifestEntry};
use crate::error::{Error, Result};

pub use align::{align, psr, Aligned, AlignmentResult};
pub use ctc::{ctc_decode, ctc_loss, ctc_nll};
pub use mushra::{load_mushra_pairs, validate_against_mushra, MushraPair, MushraValidation, SystemSamples};
pub use recognizer::{ctc_train, ConvRecognizer, CtcTrainOptions, PhonemeRecognizer, RecognizerConfig};
pub use report::{evaluate, EvalReport, EvaluateOptions, Metric};
pub use scorer::{ExternalScorer, ScoreOutcome};
pub use secs::{secs, MelStatsEmbedder, SpeakerEmbedder};

/// A waveform with its reference transcription in recognizer class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUtterance {
    pub id: String,
    pub waveform: Vec<f32>,
    pub reference: Vec<u32>,
}

/// Identifier of a manifest entry: its audio file stem.
pub fn utterance_id(entry: &ManifestEntry) -> String {
    entry
        .audio_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Maps phoneme symbols to indices of `inventory`.
pub fn phoneme_indices<S: AsRef<str>>(symbols: &[S], inventory: &[String]) -> Result<Vec<u32>> {
    symbols
        .iter()
        .map(|p| {
            inventory
                .iter()
                .position(|q| q == p.as_ref())
                .map(|i| i as u32)
                .ok_or_else(|| Error::UnknownId {
                    kind: "phoneme",
                    id: p.as_ref().to_string(),
                })
        })
        .collect()
}

/// Reads every manifest entry's audio and maps its phonemes onto `inventory`.
pub fn load_utterances(manifest: &Manifest, inventory: &[String]) -> Result<Vec<EvalUtterance>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(EvalUtterance {
                id: utterance_id(e),
                waveform: read_wav(&e.audio_path)?.0,
                reference: phoneme_indices(&e.phonemes, inventory)?,
            })
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtterancePsr {
    pub id: String,
    pub psr: f64,
    pub reference_len: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

/// Corpus-level phoneme substitution rate.
///
/// `mean` and `std` aggregate per-utterance rates. Deletion and insertion
/// rates are reported alongside as percentages of all reference phonemes,
/// because an utterance whose phonemes are all dropped scores 0 on PSR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsrSummary {
    pub mean: f64,
    pub std: f64,
    pub deletion_rate: f64,
    pub insertion_rate: f64,
    pub utterances: Vec<UtterancePsr>,
}

/// Transcribes each utterance and scores it against its reference.
pub fn psr_corpus(utterances: &[EvalUtterance], recognizer: &dyn PhonemeRecognizer) -> Result<PsrSummary> {
    if utterances.is_empty() {
        return Err(Error::InvalidInput("phoneme substitution rate needs at least one utterance".into()));
    }
    let mut rows = Vec::with_capacity(utterances.len());
    for u in utterances {
        let with_id = |e: Error| Error::InvalidInput(format!("utterance {}: {e}", u.id));
        let hyp = recognizer.transcribe(&u.waveform).map_err(with_id)?;
        let a = align(&u.reference, &hyp);
        rows.push(UtterancePsr {
            id: u.id.clone(),
            psr: psr(&u.reference, &hyp).map_err(with_id)?,
            reference_len: u.reference.len(),
            substitutions: a.substitutions,
            deletions: a.deletions,
            insertions: a.insertions,
        });
    }
    let (mean, std) = mean_std(&rows.iter().map(|r| r.psr).collect::<Vec<_>>());
    let total: usize = rows.iter().map(|r| r.reference_len).sum();
    let rate = |f: fn(&UtterancePsr) -> usize| 100.0 * rows.iter().map(f).sum::<usize>() as f64 / total as f64;
    Ok(PsrSummary {
        mean,
        std,
        deletion_rate: rate(|r| r.deletions),
        insertion_rate: rate(|r| r.insertions),
        utterances: rows,
    })
}

/// Log-posteriors that put almost all mass on `path[t]` at frame `t`.
///
/// Handy for driving decoders and metrics with a known transcription.
pub fn peaked_posteriors(path: &[u32], classes: usize) -> Result<candle_core::Tensor> {
    let off = (1e-4f64 / (classes - 1).max(1) as f64).ln() as f32;
    let on = (1.0f64 - 1e-4).ln() as f32;
    let v: Vec<f32> = path
        .iter()
        .flat_map(|&k| (0..classes).map(move |j| if j == k as usize { on } else { off }))
        .collect();
    Ok(candle_core::Tensor::from_vec(v, (path.len(), classes), &candle_core::Device::Cpu)?)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::collections::HashMap;

    /// Recognizer that looks its transcription up by waveform length.
    pub struct Scripted {
        pub phonemes: Vec<String>,
        pub by_len: HashMap<usize, Vec<u32>>,
    }

    impl PhonemeRecognizer for Scripted {
        fn phonemes(&self) -> &[String] {
            &self.phonemes
        }

        fn posteriors(&self, w: &[f32]) -> Result<candle_core::Tensor> {
            let labels = self
                .by_len
                .get(&w.len())
                .ok_or_else(|| Error::InvalidInput(format!("no script for length {}", w.len())))?;
            let blank = self.phonemes.len() as u32;
            let path: Vec<u32> = labels.iter().flat_map(|&l| [l, blank]).collect();
            peaked_posteriors(&path, self.phonemes.len() + 1)
        }
    }
}
