//! Procedural speech-like corpus generator.
//!
//! Produces small multi-speaker, multi-language corpora with exact phoneme
//! durations and f0 tracks, for tests, fixtures and desk-scale runs. Vowels,
//! nasals and liquids are additive harmonic sources shaped by a formant
//! envelope; fricatives and stop bursts are band-passed noise. Speakers differ
//! in mean f0, contour range, formant scaling and spectral tilt.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wav::write_wav;
use super::{Manifest, ManifestEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Phone {
    Silence,
    Vowel([f64; 3]),
    Nasal([f64; 3]),
    Liquid([f64; 3]),
    Fricative { centre: f64, bandwidth: f64, gain: f64 },
    Stop { burst: f64 },
}

fn phone(symbol: &str) -> Option<Phone> {
    use Phone::*;
    Some(match symbol {
        "sil" => Silence,
        "a" => Vowel([730.0, 1090.0, 2440.0]),
        "e" => Vowel([530.0, 1840.0, 2480.0]),
        "i" => Vowel([270.0, 2290.0, 3010.0]),
        "o" => Vowel([570.0, 840.0, 2410.0]),
        "u" => Vowel([300.0, 870.0, 2240.0]),
        "ae" => Vowel([660.0, 1720.0, 2410.0]),
        "er" => Vowel([490.0, 1350.0, 1690.0]),
        "m" => Nasal([280.0, 1300.0, 2500.0]),
        "n" => Nasal([280.0, 1700.0, 2600.0]),
        "ny" => Nasal([280.0, 2000.0, 2700.0]),
        "l" => Liquid([360.0, 1300.0, 2700.0]),
        "rr" => Liquid([420.0, 1250.0, 2300.0]),
        "s" => Fricative { centre: 5500.0, bandwidth: 1500.0, gain: 0.35 },
        "sh" => Fricative { centre: 3000.0, bandwidth: 900.0, gain: 0.35 },
        "f" => Fricative { centre: 4500.0, bandwidth: 3000.0, gain: 0.15 },
        "x" => Fricative { centre: 1500.0, bandwidth: 600.0, gain: 0.25 },
        "t" => Stop { burst: 4000.0 },
        "k" => Stop { burst: 1800.0 },
        "p" => Stop { burst: 800.0 },
        _ => return None,
    })
}

/// Phoneme inventory of a synthetic language (`sil` excluded).
pub fn inventory(language: &str) -> Option<&'static [&'static str]> {
    match language {
        "en" => Some(&["a", "e", "i", "o", "u", "ae", "er", "m", "n", "l", "s", "sh", "f", "t", "k", "p"]),
        "es" => Some(&["a", "e", "i", "o", "u", "m", "n", "ny", "l", "rr", "s", "f", "x", "t", "k", "p"]),
        _ => None,
    }
}

fn is_voiced(p: Phone) -> bool {
    matches!(p, Phone::Vowel(_) | Phone::Nasal(_) | Phone::Liquid(_))
}

/// Synthetic speaker characteristics.
#[derive(Debug, Clone)]
pub struct VoiceProfile {
    pub name: String,
    pub f0_mean: f64,
    /// Relative amplitude of the slow f0 contour.
    pub f0_range: f64,
    pub formant_scale: f64,
    /// Spectral roll-off corner in Hz; lower is darker.
    pub tilt_hz: f64,
}

impl VoiceProfile {
    pub fn new(name: &str, f0_mean: f64, formant_scale: f64) -> Self {
        Self {
            name: name.to_string(),
            f0_mean,
            f0_range: 0.12,
            formant_scale,
            tilt_hz: 600.0,
        }
    }
}

/// Rendered utterance: samples (exactly `frames * hop`) and per-frame f0.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub samples: Vec<f32>,
    pub f0: Vec<f32>,
}

struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    /// Constant-peak band-pass.
    fn bandpass(centre: f64, bandwidth: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * centre.min(sr * 0.45) / sr;
        let q = (centre / bandwidth).max(0.3);
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn formant_envelope(f: f64, formants: &[f64; 3], scale: f64, tilt_hz: f64) -> f64 {
    let gains = [1.0, 0.6, 0.3];
    let bws = [90.0, 110.0, 150.0];
    let mut a = 0.0;
    for i in 0..3 {
        let d = (f - formants[i] * scale) / bws[i];
        a += gains[i] / (1.0 + d * d);
    }
    a / (1.0 + f / tilt_hz)
}

/// Renders a phoneme sequence with the given per-phoneme frame durations.
pub fn render(
    phonemes: &[&str],
    durations: &[u32],
    voice: &VoiceProfile,
    sample_rate: u32,
    hop: usize,
    rng: &mut impl Rng,
) -> Result<Rendered> {
    if phonemes.len() != durations.len() {
        return Err(Error::InvalidInput("one duration per phoneme required".into()));
    }
    let phones: Vec<Phone> = phonemes
        .iter()
        .map(|s| phone(s).ok_or_else(|| Error::InvalidInput(format!("unknown synthetic phoneme `{s}`"))))
        .collect::<Result<_>>()?;
    let frames: usize = durations.iter().map(|&d| d as usize).sum();
    let sr = sample_rate as f64;
    let mut frame_phone = Vec::with_capacity(frames);
    for (p, &d) in phones.iter().zip(durations) {
        frame_phone.extend(std::iter::repeat_n(*p, d as usize));
    }

    let cycles = rng.gen_range(0.5..1.5);
    let offset = rng.gen_range(0.0..2.0 * PI);
    let f0: Vec<f32> = (0..frames)
        .map(|i| {
            if !is_voiced(frame_phone[i]) {
                return 0.0;
            }
            let t = i as f64 / frames.max(1) as f64;
            let contour = 1.0 + voice.f0_range * (2.0 * PI * cycles * t + offset).sin() - 0.08 * t;
            (voice.f0_mean * contour) as f32
        })
        .collect();

    // Per-frame harmonic amplitudes (up to Nyquist of the lowest f0).
    let max_h = (sr / 2.0 / (voice.f0_mean * 0.7)) as usize;
    let harmonic_amps: Vec<Vec<f64>> = (0..frames)
        .map(|i| {
            let (formants, gain) = match frame_phone[i] {
                Phone::Vowel(f) => (f, 1.0),
                Phone::Liquid(f) => (f, 0.6),
                Phone::Nasal(f) => (f, 0.45),
                _ => return vec![0.0; max_h],
            };
            let f0 = f0[i] as f64;
            (1..=max_h)
                .map(|h| {
                    let f = h as f64 * f0;
                    if f >= sr / 2.0 {
                        0.0
                    } else {
                        gain * formant_envelope(f, &formants, voice.formant_scale, voice.tilt_hz)
                    }
                })
                .collect()
        })
        .collect();

    let n = frames * hop;
    let mut out = vec![0f64; n];
    let mut phase = 0.0f64;
    let mut filters: Vec<Option<Biquad>> = frame_phone
        .iter()
        .map(|p| match *p {
            Phone::Fricative { centre, bandwidth, .. } => Some(Biquad::bandpass(centre * voice.formant_scale, bandwidth, sr)),
            Phone::Stop { burst } => Some(Biquad::bandpass(burst * voice.formant_scale, burst * 0.6, sr)),
            _ => None,
        })
        .collect();
    for (s, o) in out.iter_mut().enumerate() {
        // Sample s sits between frame centres `lo * hop` and `(lo + 1) * hop`.
        let pos = s as f64 / hop as f64;
        let lo = (pos.floor() as usize).min(frames - 1);
        let hi = (lo + 1).min(frames - 1);
        let w = pos - lo as f64;
        let f0_lo = f0[lo] as f64;
        let f0_hi = if f0[hi] > 0.0 { f0[hi] as f64 } else { f0_lo };
        let cur_f0 = if f0_lo > 0.0 { f0_lo * (1.0 - w) + f0_hi * w } else { f0_hi };
        let mut v = 0.0;
        if cur_f0 > 0.0 {
            phase = (phase + 2.0 * PI * cur_f0 / sr) % (2.0 * PI);
            let (a_lo, a_hi) = (&harmonic_amps[lo], &harmonic_amps[hi]);
            for h in 0..max_h {
                let amp = a_lo[h] * (1.0 - w) + a_hi[h] * w;
                if amp > 1e-6 {
                    v += amp * ((h + 1) as f64 * phase).sin();
                }
            }
            v *= 0.12;
        }
        let nearest = (pos + 0.5).floor().min((frames - 1) as f64) as usize;
        match frame_phone[nearest] {
            Phone::Fricative { gain, .. } => {
                let noise = rng.gen_range(-1.0..1.0);
                v += gain * filters[nearest].as_mut().expect("fricative filter").step(noise);
            }
            Phone::Stop { .. } => {
                // Closure, then a decaying burst in the last 40% of the frame.
                let frac = pos + 0.5 - nearest as f64;
                if frac > 0.6 {
                    let noise = rng.gen_range(-1.0..1.0);
                    let env = (-(frac - 0.6) * 8.0).exp();
                    v += 0.6 * env * filters[nearest].as_mut().expect("stop filter").step(noise);
                }
            }
            _ => {}
        }
        v += rng.gen_range(-1.0..1.0) * 2e-4;
        *o = v;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 1.0 };
    Ok(Rendered {
        samples: out.iter().map(|v| (v * scale) as f32).collect(),
        f0,
    })
}

/// Random phoneme string with plausible durations (frames).
pub fn random_sentence(language: &str, min_len: usize, max_len: usize, rng: &mut impl Rng) -> Result<(Vec<String>, Vec<u32>)> {
    let inv = inventory(language).ok_or_else(|| Error::InvalidInput(format!("no synthetic inventory for `{language}`")))?;
    let len = rng.gen_range(min_len..=max_len);
    let mut phonemes = vec!["sil".to_string()];
    let mut durations = vec![rng.gen_range(3..=6)];
    for _ in 0..len {
        let p = inv[rng.gen_range(0..inv.len())];
        let d = match phone(p).expect("inventory symbols are known") {
            Phone::Vowel(_) => rng.gen_range(5..=9),
            Phone::Stop { .. } => rng.gen_range(2..=4),
            _ => rng.gen_range(3..=6),
        };
        phonemes.push(p.to_string());
        durations.push(d);
    }
    phonemes.push("sil".to_string());
    durations.push(rng.gen_range(3..=6));
    Ok((phonemes, durations))
}

/// What to generate.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub voices: Vec<VoiceProfile>,
    pub language: String,
    pub utterances_per_voice: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub seed: u64,
}

/// Writes WAVs under `out_dir/wavs` and a manifest at `out_dir/manifest.tsv`.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<(PathBuf, Manifest)> {
    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::new();
    for voice in &spec.voices {
        for i in 0..spec.utterances_per_voice {
            let (phonemes, durations) = random_sentence(&spec.language, spec.min_phonemes, spec.max_phonemes, &mut rng)?;
            let refs: Vec<&str> = phonemes.iter().map(String::as_str).collect();
            let r = render(&refs, &durations, voice, spec.sample_rate, spec.hop, &mut rng)?;
            let name = format!("{}_{}_{i:04}.wav", voice.name, spec.language);
            write_wav(&wav_dir.join(&name), &r.samples, spec.sample_rate)?;
            entries.push(ManifestEntry {
                audio_path: PathBuf::from("wavs").join(name),
                phonemes,
                durations,
                f0: r.f0,
                speaker_id: voice.name.clone(),
                language_id: spec.language.clone(),
            });
        }
    }
    let text = Manifest {
        speakers: spec.voices.iter().map(|v| v.name.clone()).collect(),
        languages: vec![spec.language.clone()],
        entries,
        phonemes: Vec::new(),
    }
    .to_text();
    let path = out_dir.join("manifest.tsv");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::parse(&text, out_dir, &path)?;
    Ok((path, manifest))
}
