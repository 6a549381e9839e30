//! Dataset manifests, feature extraction and training examples.
//!
//! # Manifest format
//!
//! UTF-8 text, one record per line, six tab-separated fields:
//!
//! ```text
//! audio_path <TAB> phonemes <TAB> durations <TAB> f0 <TAB> speaker_id <TAB> language_id
//! ```
//!
//! * `phonemes`: space-separated symbols
//! * `durations`: comma-separated frame counts, one per phoneme
//! * `f0`: comma-separated per-frame fundamental frequency in Hz, `0` = unvoiced
//!
//! Relative audio paths resolve against the manifest's directory. Blank lines
//! and lines starting with `#` are ignored, except for the two optional
//! vocabulary declarations
//!
//! ```text
//! #!speakers <TAB> S1,S2,...
//! #!languages <TAB> en,es,...
//! ```
//!
//! When present, every record's speaker/language must be declared; otherwise
//! the vocabulary is the set of ids in order of first appearance.

pub mod cache;
pub mod dataset;
pub mod mel;
pub mod pitch;
pub mod synth;
pub mod wav;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::AudioConfig;
use crate::error::{Error, Result};

pub use dataset::{Dataset, Utterance};
pub use mel::{compute_mel, MelExtractor};
pub use pitch::{dequantize_pitch, quantize_pitch, PitchStats, PITCH_BINS, UNVOICED_BIN};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub phonemes: Vec<String>,
    pub durations: Vec<u32>,
    pub f0: Vec<f32>,
    pub speaker_id: String,
    pub language_id: String,
}

impl ManifestEntry {
    pub fn total_frames(&self) -> u64 {
        self.durations.iter().map(|&d| d as u64).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub speakers: Vec<String>,
    pub languages: Vec<String>,
    /// Sorted set of phoneme symbols used by the entries.
    pub phonemes: Vec<String>,
}

fn parse_list<T: std::str::FromStr>(field: &str, what: &str) -> std::result::Result<Vec<T>, String> {
    if field.trim().is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("invalid {what} value `{}`", s.trim())))
        .collect()
}

fn push_unique(list: &mut Vec<String>, id: &str) {
    if !list.iter().any(|s| s == id) {
        list.push(id.to_string());
    }
}

impl Manifest {
    /// Parses manifest text. `base` resolves relative audio paths; `origin`
    /// is only used in error messages. Structural invariants are checked,
    /// audio-dependent ones are not (see [`Manifest::validate_audio`]).
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut declared_speakers: Option<Vec<String>> = None;
        let mut declared_languages: Option<Vec<String>> = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#!") {
                let (key, value) = rest
                    .split_once('\t')
                    .ok_or_else(|| parse_err(line_no, "declaration needs a tab-separated value".into()))?;
                let ids: Vec<String> = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                match key.trim() {
                    "speakers" => declared_speakers = Some(ids),
                    "languages" => declared_languages = Some(ids),
                    other => return Err(parse_err(line_no, format!("unknown declaration `{other}`"))),
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(parse_err(line_no, format!("expected 6 tab-separated fields, found {}", fields.len())));
            }
            let audio = PathBuf::from(fields[0].trim());
            let audio_path = if audio.is_relative() { base.join(audio) } else { audio };
            let phonemes: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
            let durations = parse_list::<u32>(fields[2], "duration").map_err(|m| parse_err(line_no, m))?;
            let f0 = parse_list::<f32>(fields[3], "f0").map_err(|m| parse_err(line_no, m))?;
            let speaker_id = fields[4].trim().to_string();
            let language_id = fields[5].trim().to_string();
            if speaker_id.is_empty() || language_id.is_empty() {
                return Err(parse_err(line_no, "empty speaker or language id".into()));
            }
            entries.push(ManifestEntry {
                audio_path,
                phonemes,
                durations,
                f0,
                speaker_id,
                language_id,
            });
        }

        let mut speakers = declared_speakers.clone().unwrap_or_default();
        let mut languages = declared_languages.clone().unwrap_or_default();
        let mut phonemes = BTreeSet::new();
        for (index, e) in entries.iter().enumerate() {
            let invalid = |msg: String| Error::InvalidEntry {
                index,
                audio: e.audio_path.display().to_string(),
                msg,
            };
            if e.phonemes.is_empty() {
                return Err(invalid("no phonemes".into()));
            }
            if e.durations.len() != e.phonemes.len() {
                return Err(invalid(format!(
                    "{} durations for {} phonemes",
                    e.durations.len(),
                    e.phonemes.len()
                )));
            }
            if e.total_frames() == 0 {
                return Err(invalid("durations sum to zero frames".into()));
            }
            if let Some(&bad) = e.f0.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(invalid(format!("f0 values must be finite and >= 0, found {bad}")));
            }
            match &declared_speakers {
                Some(d) if !d.contains(&e.speaker_id) => {
                    return Err(invalid(format!("speaker `{}` is not declared", e.speaker_id)))
                }
                Some(_) => {}
                None => push_unique(&mut speakers, &e.speaker_id),
            }
            match &declared_languages {
                Some(d) if !d.contains(&e.language_id) => {
                    return Err(invalid(format!("language `{}` is not declared", e.language_id)))
                }
                Some(_) => {}
                None => push_unique(&mut languages, &e.language_id),
            }
            phonemes.extend(e.phonemes.iter().cloned());
        }
        Ok(Self {
            entries,
            speakers,
            languages,
            phonemes: phonemes.into_iter().collect(),
        })
    }

    /// Checks the audio-dependent invariants: sample rate, mono, and that
    /// durations and f0 cover the spectrogram frames to within one frame.
    pub fn validate_audio(&self, audio: &AudioConfig) -> Result<()> {
        for (index, e) in self.entries.iter().enumerate() {
            let invalid = |msg: String| Error::InvalidEntry {
                index,
                audio: e.audio_path.display().to_string(),
                msg,
            };
            let (spec, samples) = wav::read_header(&e.audio_path)?;
            if spec.sample_rate != audio.sample_rate {
                return Err(invalid(format!(
                    "sample rate {} does not match configured {}",
                    spec.sample_rate, audio.sample_rate
                )));
            }
            if spec.channels != 1 {
                return Err(invalid(format!("expected mono audio, found {} channels", spec.channels)));
            }
            let frames = (samples as u64).div_ceil(audio.hop_length as u64);
            let total = e.total_frames();
            if total.abs_diff(frames) > 1 {
                return Err(invalid(format!(
                    "durations sum to {total} frames but the audio has {frames}"
                )));
            }
            if (e.f0.len() as u64).abs_diff(frames) > 1 {
                return Err(invalid(format!("{} f0 values for {frames} frames", e.f0.len())));
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            phonemes: self.phonemes.clone(),
            speakers: self.speakers.clone(),
            languages: self.languages.clone(),
        }
    }

    /// Renders the manifest back to its text form (paths as stored).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#!speakers\t{}", self.speakers.join(","));
        let _ = writeln!(out, "#!languages\t{}", self.languages.join(","));
        for e in &self.entries {
            let durations: Vec<String> = e.durations.iter().map(u32::to_string).collect();
            let f0: Vec<String> = e.f0.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.audio_path.display(),
                e.phonemes.join(" "),
                durations.join(","),
                f0.join(","),
                e.speaker_id,
                e.language_id
            );
        }
        out
    }
}

/// Reads and fully validates a manifest file.
pub fn load_manifest(path: &Path, audio: &AudioConfig) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = Manifest::parse(&text, base, path)?;
    manifest.validate_audio(audio)?;
    Ok(manifest)
}

/// Symbol tables mapping phonemes, speakers and languages to row ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub phonemes: Vec<String>,
    pub speakers: Vec<String>,
    pub languages: Vec<String>,
}

fn lookup(list: &[String], id: &str, kind: &'static str) -> Result<u32> {
    list.iter()
        .position(|s| s == id)
        .map(|i| i as u32)
        .ok_or_else(|| Error::UnknownId {
            kind,
            id: id.to_string(),
        })
}

impl Vocab {
    pub fn phoneme_id(&self, p: &str) -> Result<u32> {
        lookup(&self.phonemes, p, "phoneme")
    }

    pub fn phoneme_ids<S: AsRef<str>>(&self, ps: &[S]) -> Result<Vec<u32>> {
        ps.iter().map(|p| self.phoneme_id(p.as_ref())).collect()
    }

    pub fn speaker_id(&self, s: &str) -> Result<u32> {
        lookup(&self.speakers, s, "speaker")
    }

    pub fn language_id(&self, l: &str) -> Result<u32> {
        lookup(&self.languages, l, "language")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        Manifest::parse(text, Path::new("/data"), Path::new("m.tsv"))
    }

    #[test]
    fn empty_manifest() {
        let m = parse("").unwrap();
        assert!(m.entries.is_empty());
        assert!(m.vocab().speakers.is_empty());
    }

    #[test]
    fn three_line_fixture_vocab_counts() {
        let text = "\
a.wav\tsil h e l o sil\t2,3,4,2,5,2\t0,0,0,0,0,120,121,122,0,0,0,0,0,130,131,132,133,0\tS1\ten
b.wav\tsil o l a sil\t2,4,3,4,2\t0,0,120,120,120,120,0,0,0,125,125,125,125,0,0\tS2\tes
# a comment line
c.wav\tsil m a sil\t1,2,3,1\t0,110,110,115,115,115,0\tS1\tes
";
        let m = parse(text).unwrap();
        assert_eq!(m.entries.len(), 3);
        // hand count: {sil,h,e,l,o,a,m} = 7 symbols, speakers {S1,S2}, languages {en,es}
        assert_eq!(m.phonemes.len(), 7);
        assert_eq!(m.speakers, vec!["S1", "S2"]);
        assert_eq!(m.languages, vec!["en", "es"]);
        assert_eq!(m.entries[0].audio_path, Path::new("/data/a.wav"));
        assert_eq!(m.entries[1].total_frames(), 15);
    }

    #[test]
    fn duration_count_mismatch_names_entry() {
        let text = "x.wav\ta b\t1,2\t0,0,0\tS\tL\ny.wav\ta b c\t1,2\t0,0,0\tS\tL\n";
        match parse(text).unwrap_err() {
            Error::InvalidEntry { index, audio, msg } => {
                assert_eq!(index, 1);
                assert!(audio.ends_with("y.wav"));
                assert!(msg.contains("2 durations for 3 phonemes"), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "#!speakers\tS\n\nx.wav\ta\t1\t0\tS\n";
        match parse(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
        match parse("x.wav\ta\tone\t0\tS\tL\n").unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 1);
                assert!(msg.contains("one"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn undeclared_speaker_rejected() {
        let text = "#!speakers\tS1\n#!languages\ten\nx.wav\ta\t1\t0\tS2\ten\n";
        assert!(matches!(parse(text), Err(Error::InvalidEntry { .. })));
    }

    #[test]
    fn text_round_trip() {
        let text = "#!speakers\tS1\n#!languages\ten\n/x.wav\ta b\t1,2\t0,100.5,0\tS1\ten\n";
        let m = parse(text).unwrap();
        assert_eq!(parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn vocab_lookup() {
        let v = Vocab {
            phonemes: vec!["a".into(), "b".into()],
            speakers: vec!["S".into()],
            languages: vec!["en".into()],
        };
        assert_eq!(v.phoneme_ids(&["b", "a"]).unwrap(), vec![1, 0]);
        assert!(matches!(v.speaker_id("T"), Err(Error::UnknownId { kind: "speaker", .. })));
    }
}
