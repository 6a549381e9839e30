//! Phoneme recognizers: the interface and a small convolutional reference.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ctc::{ctc_decode, ctc_loss};
use super::EvalUtterance;
use crate::config::{AudioConfig, OptimizerConfig};
use crate::dataio::MelExtractor;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv1d, ConvCfg};
use crate::nn::{leaky_relu, scalar, Init, NamedParams, Parameterized};
use crate::training::optim::AdamW;

/// Frame-level phoneme posteriors.
///
/// Class `i < P` is `phonemes()[i]`; class `P` is the CTC blank.
pub trait PhonemeRecognizer {
    fn phonemes(&self) -> &[String];

    /// `frames x (P + 1)` log-probabilities; every row is a log-simplex.
    fn posteriors(&self, waveform: &[f32]) -> Result<Tensor>;

    /// Greedy best-path transcription as phoneme indices.
    fn transcribe(&self, waveform: &[f32]) -> Result<Vec<u32>> {
        ctc_decode(&self.posteriors(waveform)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub hidden: usize,
    pub kernel: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            hidden: 96,
            kernel: 5,
            layers: 3,
            seed: 7,
        }
    }
}

/// Log-mel front end, a stack of same-length convolutions and a per-frame
/// classification head.
#[derive(Debug, Clone)]
pub struct ConvRecognizer {
    cfg: RecognizerConfig,
    audio: AudioConfig,
    phonemes: Vec<String>,
    mel: MelExtractor,
    convs: Vec<Conv1d>,
    head: Conv1d,
}

impl Parameterized for ConvRecognizer {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&crate::nn::join(prefix, &format!("conv{i}")), out);
        }
        self.head.visit_params(&crate::nn::join(prefix, "head"), out);
    }
}

impl ConvRecognizer {
    pub fn new(phonemes: Vec<String>, audio: &AudioConfig, cfg: &RecognizerConfig) -> Result<Self> {
        if phonemes.is_empty() {
            return Err(Error::InvalidInput("a recognizer needs at least one phoneme".into()));
        }
        if cfg.kernel % 2 == 0 || cfg.hidden == 0 {
            return Err(Error::Config(vec![format!(
                "recognizer kernel ({}) must be odd and hidden ({}) > 0",
                cfg.kernel, cfg.hidden
            )]));
        }
        let mut init = Init::new(cfg.seed, DType::F32);
        let mut convs = Vec::with_capacity(cfg.layers);
        let mut ch = audio.mel_bins;
        for _ in 0..cfg.layers {
            convs.push(Conv1d::new(&mut init, ch, cfg.hidden, cfg.kernel, ConvCfg::same(cfg.kernel, 1))?);
            ch = cfg.hidden;
        }
        let head = Conv1d::new(&mut init, ch, phonemes.len() + 1, 1, ConvCfg::same(1, 1))?;
        Ok(Self {
            cfg: cfg.clone(),
            audio: audio.clone(),
            mel: MelExtractor::new(audio)?,
            phonemes,
            convs,
            head,
        })
    }

    pub fn classes(&self) -> usize {
        self.phonemes.len() + 1
    }

    /// Audio settings the features are computed with.
    pub fn audio(&self) -> &AudioConfig {
        &self.audio
    }

    /// Per-utterance normalized log-mel, `mel_bins x frames`.
    pub fn features(&self, waveform: &[f32]) -> Result<Tensor> {
        let m = self.mel.compute(waveform)?.t()?;
        let mean = m.mean_keepdim(1)?;
        let centered = m.broadcast_sub(&mean)?;
        let std = centered.sqr()?.mean_keepdim(1)?.affine(1.0, 1e-5)?.sqrt()?;
        Ok(centered.broadcast_div(&std)?)
    }

    /// `(B, mel_bins, T)` features to `(B, T, P + 1)` log-probabilities.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut h = features.clone();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, 0.1)?;
        }
        let logits = self.head.forward(&h)?.transpose(1, 2)?;
        Ok(log_softmax(&logits)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = BTreeMap::new();
        for (name, var) in self.named_params("") {
            tensors.insert(name, (var.dims().to_vec(), var.as_tensor().flatten_all()?.to_vec1::<f32>()?));
        }
        let header = StoredHeader {
            config: self.cfg.clone(),
            audio: self.audio.clone(),
            phonemes: self.phonemes.clone(),
            tensors: tensors.iter().map(|(n, (s, _))| (n.clone(), s.clone())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(RECOGNIZER_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in tensors.values() {
            data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != RECOGNIZER_MAGIC {
            return Err(bad("not a recognizer file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: StoredHeader = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let rec = Self::new(header.phonemes, &header.audio, &header.config)?;
        let params: BTreeMap<String, _> = rec.named_params("").into_iter().collect();
        if params.len() != header.tensors.len() {
            return Err(bad("parameter count mismatch"));
        }
        let mut pos = 16 + len;
        for (name, shape) in &header.tensors {
            let var = params.get(name).ok_or_else(|| bad(&format!("unexpected tensor `{name}`")))?;
            if var.dims() != shape.as_slice() {
                return Err(bad(&format!("shape mismatch at `{name}`")));
            }
            let n: usize = shape.iter().product();
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated tensors"))?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            var.set(&Tensor::from_vec(data, shape.as_slice(), &Device::Cpu)?)?;
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(rec)
    }
}

const RECOGNIZER_MAGIC: &[u8; 8] = b"ADPTRECG";

#[derive(Serialize, Deserialize)]
struct StoredHeader {
    config: RecognizerConfig,
    audio: AudioConfig,
    phonemes: Vec<String>,
    tensors: Vec<(String, Vec<usize>)>,
}

fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let lse = x.log_sum_exp(D::Minus1)?.unsqueeze(D::Minus1)?;
    Ok(x.broadcast_sub(&lse)?)
}

impl PhonemeRecognizer for ConvRecognizer {
    fn phonemes(&self) -> &[String] {
        &self.phonemes
    }

    fn posteriors(&self, waveform: &[f32]) -> Result<Tensor> {
        let f = self.features(waveform)?.unsqueeze(0)?;
        Ok(self.forward(&f)?.squeeze(0)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CtcTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr: 2e-3,
            seed: 11,
        }
    }
}

/// Trains `recognizer` with the CTC loss; returns the mean loss of each epoch.
///
/// Utterances are shuffled per epoch with a seeded generator and padded to
/// the longest in their batch; padded frames do not enter the loss.
pub fn ctc_train(recognizer: &mut ConvRecognizer, corpus: &[EvalUtterance], opts: &CtcTrainOptions) -> Result<Vec<f64>> {
    if corpus.is_empty() || opts.batch_size == 0 {
        return Err(Error::InvalidInput("recognizer training needs utterances and batch_size > 0".into()));
    }
    let classes = recognizer.classes();
    let mut feats = Vec::with_capacity(corpus.len());
    for u in corpus {
        if let Some(&bad) = u.reference.iter().find(|&&p| p as usize >= classes - 1) {
            return Err(Error::InvalidInput(format!("{}: phoneme id {bad} outside the recognizer vocabulary", u.id)));
        }
        let f = recognizer.features(&u.waveform)?;
        let frames = f.dim(1)?;
        let need = super::ctc::min_frames(&u.reference);
        if need > frames {
            return Err(Error::InvalidInput(format!("{}: {} phonemes need {need} frames, got {frames}", u.id, u.reference.len())));
        }
        feats.push(f);
    }
    let optim_cfg = OptimizerConfig {
        beta1: 0.9,
        beta2: 0.999,
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    let mut opt = AdamW::new(recognizer.named_params(""), &optim_cfg, opts.lr, |_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let lengths: Vec<usize> = batch.iter().map(|&i| feats[i].dim(1)).collect::<candle_core::Result<_>>()?;
            let t_max = *lengths.iter().max().unwrap();
            let padded: Vec<Tensor> = batch
                .iter()
                .zip(&lengths)
                .map(|(&i, &l)| feats[i].pad_with_zeros(1, 0, t_max - l))
                .collect::<candle_core::Result<_>>()?;
            let x = Tensor::stack(&padded, 0)?;
            let labels: Vec<Vec<u32>> = batch.iter().map(|&i| corpus[i].reference.clone()).collect();
            let losses = ctc_loss(&recognizer.forward(&x)?, &labels, &lengths)?;
            let loss = losses.sum_all()?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: "ctc".into(),
                    step: None,
                    value,
                });
            }
            total += value;
            let mean = (loss / batch.len() as f64)?;
            let grads = mean.backward()?;
            opt.step(&opt.gradients(&grads))?;
        }
        history.push(total / corpus.len() as f64);
    }
    Ok(history)
}
