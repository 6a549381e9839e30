//! In-memory training examples built from a validated manifest.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cache::CacheArray;
use super::mel::MelExtractor;
use super::pitch::{quantize_pitch, PitchStats};
use super::wav::read_wav;
use super::{Manifest, ManifestEntry, Vocab};
use crate::config::AudioConfig;
use crate::error::{Error, Result};

/// One training example.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub phonemes: Vec<String>,
    pub phoneme_ids: Vec<u32>,
    /// `frames x mel_bins`, f32.
    pub mel: Tensor,
    /// Exactly `frames * hop_length` samples.
    pub waveform: Vec<f32>,
    /// Ground-truth frames per phoneme; sums to `frames`.
    pub durations: Vec<u32>,
    /// Per-frame pitch bins in `0..=255`.
    pub pitch_bins: Vec<u8>,
    pub speaker: String,
    pub language: String,
    pub speaker_id: u32,
    pub language_id: u32,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.pitch_bins.len()
    }
}

/// Frame-count reconciliation of one entry: the shorter of the audio frame
/// count and the duration total wins; durations are trimmed from the end,
/// audio and f0 are truncated or zero/edge padded to match.
pub(crate) fn reconcile(
    entry: &ManifestEntry,
    mut samples: Vec<f32>,
    hop: usize,
) -> std::result::Result<(Vec<u32>, Vec<f32>, Vec<f32>), String> {
    let audio_frames = samples.len().div_ceil(hop) as u64;
    let total = entry.total_frames();
    if audio_frames.abs_diff(total) > 1 {
        return Err(format!("durations sum to {total} frames but the audio has {audio_frames}"));
    }
    let frames = audio_frames.min(total) as usize;
    if frames == 0 {
        return Err("utterance has no frames".into());
    }
    let mut durations = entry.durations.clone();
    let mut excess = total as usize - frames;
    for d in durations.iter_mut().rev() {
        let cut = excess.min(*d as usize);
        *d -= cut as u32;
        excess -= cut;
        if excess == 0 {
            break;
        }
    }
    samples.resize(frames * hop, 0.0);
    let mut f0 = entry.f0.clone();
    if (f0.len() as i64 - frames as i64).abs() > 1 {
        return Err(format!("{} f0 values for {frames} frames", f0.len()));
    }
    let last = f0.last().copied().unwrap_or(0.0);
    f0.resize(frames, last);
    Ok((durations, samples, f0))
}

/// Loaded utterances plus the per-speaker pitch statistics used to quantize them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub pitch_stats: BTreeMap<String, PitchStats>,
}

impl Dataset {
    /// Loads audio, reconciles frame counts, and computes mel and pitch
    /// targets. Features are read from / written to `cache_dir` when given.
    pub fn from_manifest(
        manifest: &Manifest,
        vocab: &Vocab,
        audio: &AudioConfig,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let mut pitch_stats = BTreeMap::new();
        for spk in &manifest.speakers {
            let f0 = manifest
                .entries
                .iter()
                .filter(|e| &e.speaker_id == spk)
                .flat_map(|e| e.f0.iter());
            if manifest.entries.iter().any(|e| &e.speaker_id == spk) {
                pitch_stats.insert(spk.clone(), PitchStats::from_f0(f0)?);
            }
        }
        let extractor = MelExtractor::new(audio)?;
        if let Some(dir) = cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut utterances = Vec::with_capacity(manifest.entries.len());
        for (index, entry) in manifest.entries.iter().enumerate() {
            let invalid = |msg: String| Error::InvalidEntry {
                index,
                audio: entry.audio_path.display().to_string(),
                msg,
            };
            let (samples, sr) = read_wav(&entry.audio_path)?;
            if sr != audio.sample_rate {
                return Err(invalid(format!("sample rate {sr} != configured {}", audio.sample_rate)));
            }
            let (durations, waveform, f0) = reconcile(entry, samples, audio.hop_length).map_err(invalid)?;
            let stem = entry
                .audio_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("utt{index}"));
            let pitch_bins = quantize_pitch(&f0, &pitch_stats[&entry.speaker_id])?;
            let mel = match cache_dir {
                Some(dir) => {
                    let path = dir.join(format!("{index:05}_{stem}.mel"));
                    match CacheArray::read(&path) {
                        Ok(CacheArray::F32 { shape, data }) if shape == [f0.len(), audio.mel_bins] => {
                            Tensor::from_vec(data, (shape[0], shape[1]), &Device::Cpu)?
                        }
                        _ => {
                            let mel = extractor.compute(&waveform)?;
                            CacheArray::F32 {
                                shape: mel.dims().to_vec(),
                                data: mel.flatten_all()?.to_vec1()?,
                            }
                            .write(&path)?;
                            CacheArray::U8 {
                                shape: vec![pitch_bins.len()],
                                data: pitch_bins.clone(),
                            }
                            .write(&dir.join(format!("{index:05}_{stem}.pitch")))?;
                            mel
                        }
                    }
                }
                None => extractor.compute(&waveform)?,
            };
            utterances.push(Utterance {
                id: stem,
                phoneme_ids: vocab.phoneme_ids(&entry.phonemes)?,
                phonemes: entry.phonemes.clone(),
                mel,
                waveform,
                durations,
                pitch_bins,
                speaker: entry.speaker_id.clone(),
                language: entry.language_id.clone(),
                speaker_id: vocab.speaker_id(&entry.speaker_id)?,
                language_id: vocab.language_id(&entry.language_id)?,
            });
        }
        Ok(Self {
            utterances,
            pitch_stats,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn steps_per_epoch(&self, batch_size: usize) -> u64 {
        self.len().div_ceil(batch_size) as u64
    }

    /// Deterministic permutation of utterance indices for one epoch.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order
    }

    /// Indices of the batch consumed at global `step`; a pure function of
    /// `(seed, step)` so interrupted runs resume on the same data.
    pub fn batch_at(&self, seed: u64, step: u64, batch_size: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(batch_size);
        let epoch = step / spe;
        let within = (step % spe) as usize;
        let order = self.epoch_order(seed, epoch);
        let start = within * batch_size;
        order[start..(start + batch_size).min(order.len())].to_vec()
    }
}
