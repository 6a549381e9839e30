//! Speaker embedding cosine similarity.

use serde::{Deserialize, Serialize};

use crate::config::AudioConfig;
use crate::dataio::MelExtractor;
use crate::error::{Error, Result};
use crate::nn::to_f64_vec;

/// Maps a waveform to a unit-norm vector of fixed dimension.
pub trait SpeakerEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, waveform: &[f32]) -> Result<Vec<f64>>;
}

/// Cosine similarity of the two waveforms' speaker embeddings, in `[-1, 1]`.
pub fn secs(reference: &[f32], synthesized: &[f32], embedder: &dyn SpeakerEmbedder) -> Result<f64> {
    if reference.is_empty() || synthesized.is_empty() {
        return Err(Error::InvalidInput("speaker similarity needs two non-empty waveforms".into()));
    }
    let a = embedder.embed(reference)?;
    let b = embedder.embed(synthesized)?;
    cosine(&a, &b)
}

/// Cosine of two vectors, clamped against rounding to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embeddings of size {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidInput(format!("embedding has degenerate norm {n}")));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Stand-in speaker embedder: per-bin mean and standard deviation of the
/// log-mel spectrogram, centred on a corpus average and scaled to unit norm.
///
/// "Training" is fitting the centre, which removes what every voice in the
/// corpus shares and leaves the speaker-dependent spectral envelope.
#[derive(Debug, Clone)]
pub struct MelStatsEmbedder {
    mel: MelExtractor,
    center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelStatsState {
    pub audio: AudioConfig,
    pub center: Vec<f64>,
}

impl MelStatsEmbedder {
    /// Untrained embedder with a zero centre.
    pub fn new(audio: &AudioConfig) -> Result<Self> {
        Ok(Self {
            mel: MelExtractor::new(audio)?,
            center: vec![0.0; 2 * audio.mel_bins],
        })
    }

    /// Fits the centre to the average statistics of `waveforms`.
    pub fn fit<'a>(audio: &AudioConfig, waveforms: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut e = Self::new(audio)?;
        let mut sum = vec![0.0; e.center.len()];
        let mut n = 0usize;
        for w in waveforms {
            for (s, x) in sum.iter_mut().zip(e.statistics(w)?) {
                *s += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidInput("cannot fit a speaker embedder on zero waveforms".into()));
        }
        e.center = sum.into_iter().map(|s| s / n as f64).collect();
        Ok(e)
    }

    pub fn from_state(state: &MelStatsState) -> Result<Self> {
        let mut e = Self::new(&state.audio)?;
        if state.center.len() != e.center.len() {
            return Err(Error::Shape(format!("centre of size {} for {} mel bins", state.center.len(), state.audio.mel_bins)));
        }
        e.center.clone_from(&state.center);
        Ok(e)
    }

    /// `[mean_0..mean_M, std_0..std_M]` of the log-mel frames.
    fn statistics(&self, waveform: &[f32]) -> Result<Vec<f64>> {
        let m = self.mel.compute(waveform)?;
        let (frames, bins) = m.dims2()?;
        let v = to_f64_vec(&m)?;
        let mut mean = vec![0.0; bins];
        for row in v.chunks(bins) {
            for (acc, x) in mean.iter_mut().zip(row) {
                *acc += x / frames as f64;
            }
        }
        let mut var = vec![0.0; bins];
        for row in v.chunks(bins) {
            for ((acc, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (x - mu).powi(2) / frames as f64;
            }
        }
        mean.extend(var.into_iter().map(f64::sqrt));
        Ok(mean)
    }
}

impl SpeakerEmbedder for MelStatsEmbedder {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn embed(&self, waveform: &[f32]) -> Result<Vec<f64>> {
        let s = self.statistics(waveform)?;
        normalize(s.into_iter().zip(&self.center).map(|(x, c)| x - c).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{render, VoiceProfile};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Returns a fixed embedding per waveform length.
    struct Table(Vec<(usize, Vec<f64>)>);

    impl SpeakerEmbedder for Table {
        fn dim(&self) -> usize {
            self.0[0].1.len()
        }
        fn embed(&self, w: &[f32]) -> Result<Vec<f64>> {
            Ok(self.0.iter().find(|(n, _)| *n == w.len()).unwrap().1.clone())
        }
    }

    fn voice(name: &str, f0: f64, formants: f64, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = VoiceProfile::new(name, f0, formants);
        render(&["sil", "a", "m", "e", "s", "o", "sil"], &[3, 7, 4, 7, 4, 7, 3], &v, 16000, 256, &mut rng)
            .unwrap()
            .samples
    }

    #[test]
    fn constructed_extremes() {
        let s = 1.0 / 2f64.sqrt();
        let t = Table(vec![(1, vec![s, s, 0.0]), (2, vec![-s, -s, 0.0]), (3, vec![0.0, 0.0, 1.0])]);
        assert!((secs(&[0.0], &[0.0], &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((secs(&[0.0], &[0.0; 2], &t).unwrap() + 1.0).abs() < 1e-12);
        assert!(secs(&[0.0], &[0.0; 3], &t).unwrap().abs() < 1e-12);
        assert!(secs(&[], &[0.0], &t).is_err());
    }

    #[test]
    fn mel_stats_embedder_is_unit_norm_and_separates_voices() {
        let audio = AudioConfig::default();
        let a1 = voice("A", 110.0, 1.0, 1);
        let a2 = voice("A", 110.0, 1.0, 2);
        let b1 = voice("B", 220.0, 1.2, 3);
        let b2 = voice("B", 220.0, 1.2, 4);
        let e = MelStatsEmbedder::fit(&audio, [a1.as_slice(), a2.as_slice(), b1.as_slice(), b2.as_slice()]).unwrap();
        for w in [&a1, &b1] {
            let v = e.embed(w).unwrap();
            assert_eq!(v.len(), e.dim());
            assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        }
        assert!((secs(&a1, &a1, &e).unwrap() - 1.0).abs() < 1e-12);
        let same = secs(&a1, &a2, &e).unwrap();
        let cross = secs(&a1, &b1, &e).unwrap();
        assert!(same > cross, "same-voice {same} vs cross-voice {cross}");
        let restored = MelStatsEmbedder::from_state(&MelStatsState { audio, center: e.center.clone() }).unwrap();
        assert_eq!(restored.embed(&b2).unwrap(), e.embed(&b2).unwrap());
    }

    proptest! {
        #[test]
        fn secs_is_symmetric(a in proptest::collection::vec(-1f64..1.0, 4), b in proptest::collection::vec(-1f64..1.0, 4)) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let t = Table(vec![(1, normalize(a).unwrap()), (2, normalize(b).unwrap())]);
            let ab = secs(&[0.0], &[0.0; 2], &t).unwrap();
            let ba = secs(&[0.0; 2], &[0.0], &t).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((secs(&[0.0], &[0.0], &t).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
