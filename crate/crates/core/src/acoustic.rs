//! Non-autoregressive acoustic model: text encoder, duration and pitch
//! predictors with a length regulator, and a decoder producing the latents
//! consumed by the vocoder.
//!
//! All sequence tensors are channel-first with a batch of one utterance:
//! `(1, hidden, len)`.

use candle_core::{DType, Tensor, D};

use crate::adapters::{AdapterSet, AttachmentPoint, Site};
use crate::config::AcousticConfig;
use crate::dataio::PITCH_BINS;
use crate::error::{shape_err, Error, Result};
use crate::nn::layers::{ChannelNorm, Conv1d, ConvCfg, Dense, Embedding};
use crate::nn::{join, Init, NamedParams, Parameterized};

/// `LN(x + relu(pointwise(depthwise(x))))`.
#[derive(Debug, Clone)]
pub struct SepConvLayer {
    pub depthwise: Conv1d,
    pub pointwise: Conv1d,
    pub norm: ChannelNorm,
}

impl SepConvLayer {
    pub fn new(init: &mut Init, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            depthwise: Conv1d::new(init, channels, channels, kernel, ConvCfg::depthwise(kernel, channels))?,
            pointwise: Conv1d::new(init, channels, channels, 1, ConvCfg::same(1, 1))?,
            norm: ChannelNorm::new(init, channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.pointwise.forward(&self.depthwise.forward(x)?)?.relu()?;
        self.norm.forward(&(x + y)?)
    }
}

impl Parameterized for SepConvLayer {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.depthwise.visit_params(&join(prefix, "depthwise"), out);
        self.pointwise.visit_params(&join(prefix, "pointwise"), out);
        self.norm.visit_params(&join(prefix, "norm"), out);
    }
}

/// Stack of separable conv layers with an adapter point after each.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub name: String,
    pub layers: Vec<SepConvLayer>,
}

impl ConvStack {
    fn new(init: &mut Init, name: &str, channels: usize, kernels: &[usize]) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            layers: kernels
                .iter()
                .map(|&k| SepConvLayer::new(init, channels, k))
                .collect::<Result<_>>()?,
        })
    }

    pub fn point(&self, i: usize) -> String {
        format!("acoustic.{}.{i}", self.name)
    }

    pub fn forward(&self, x: &Tensor, adapters: &AdapterSet) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = adapters.apply(&self.point(i), layer.forward(&h)?)?;
        }
        Ok(h)
    }
}

impl Parameterized for ConvStack {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &i.to_string()), out);
        }
    }
}

/// `(len, dim)` sinusoidal position table.
pub fn sinusoidal_positions(len: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![0f64; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            v[pos * dim + 2 * i] = angle.sin();
            v[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_vec(v, (len, dim), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Expands `(1, C, N)` phoneme states to `(1, C, sum(durations))` frames.
pub fn length_regulate(hidden: &Tensor, durations: &[u32]) -> Result<Tensor> {
    let n = hidden.dim(2)?;
    if durations.len() != n {
        return shape_err(format!("{} durations for {n} phonemes", durations.len()));
    }
    let idx: Vec<u32> = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i as u32, d as usize))
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput("all durations are zero: empty utterance".into()));
    }
    let idx = Tensor::from_vec(idx, durations.iter().map(|&d| d as usize).sum::<usize>(), hidden.device())?;
    Ok(hidden.index_select(&idx, 2)?)
}

/// Frames for one predicted log-duration: `max(1, floor(exp(d) + 0.5))`.
pub fn duration_frames(log_duration: f64) -> u32 {
    let d = (log_duration.exp() + 0.5).floor();
    if d.is_finite() {
        d.clamp(1.0, u32::MAX as f64) as u32
    } else {
        1
    }
}

/// Log-domain training target for a ground-truth frame count.
pub fn duration_target(frames: u32) -> f64 {
    (frames.max(1) as f64).ln()
}

#[derive(Debug, Clone)]
pub struct AcousticOutput {
    /// `(1, hidden, frames)`.
    pub latents: Tensor,
    /// `(N,)` predicted log-durations.
    pub log_durations: Tensor,
    /// `(frames, 256)` unnormalized pitch logits.
    pub pitch_logits: Tensor,
    /// Frame counts used by the length regulator.
    pub durations: Vec<u32>,
    /// Pitch bins embedded before decoding.
    pub pitch_bins: Vec<u32>,
}

/// Teacher-forcing targets; `None` means predict.
#[derive(Debug, Clone, Copy, Default)]
pub struct Targets<'a> {
    pub durations: Option<&'a [u32]>,
    pub pitch_bins: Option<&'a [u8]>,
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub cfg: AcousticConfig,
    pub phoneme_embedding: Embedding,
    pub speaker_table: Embedding,
    pub language_table: Embedding,
    pub encoder: ConvStack,
    pub duration: ConvStack,
    pub duration_head: Dense,
    pub pitch: ConvStack,
    pub pitch_head: Dense,
    pub pitch_embedding: Embedding,
    pub decoder: ConvStack,
}

impl AcousticModel {
    pub fn new(init: &mut Init, cfg: &AcousticConfig, phonemes: usize, speakers: usize, languages: usize) -> Result<Self> {
        let h = cfg.hidden_dim;
        let std = 1.0 / (h as f64).sqrt();
        Ok(Self {
            cfg: cfg.clone(),
            phoneme_embedding: Embedding::new(init, phonemes, cfg.embed_dim, std)?,
            speaker_table: Embedding::new(init, speakers, cfg.embed_dim, std)?,
            language_table: Embedding::new(init, languages, cfg.embed_dim, std)?,
            encoder: ConvStack::new(init, "encoder", h, &cfg.encoder_kernel_sizes)?,
            duration: ConvStack::new(init, "duration", h, &cfg.duration_kernel_sizes)?,
            duration_head: Dense::new(init, h, 1)?,
            pitch: ConvStack::new(init, "pitch", h, &cfg.pitch_kernel_sizes)?,
            pitch_head: Dense::new(init, h, cfg.pitch_bins)?,
            pitch_embedding: Embedding::new(init, cfg.pitch_bins, h, std)?,
            decoder: ConvStack::new(init, "decoder", h, &cfg.decoder_kernel_sizes)?,
        })
    }

    fn stacks(&self) -> [&ConvStack; 4] {
        [&self.encoder, &self.duration, &self.pitch, &self.decoder]
    }

    pub fn attachment_points(&self) -> Vec<AttachmentPoint> {
        self.stacks()
            .iter()
            .flat_map(|s| {
                (0..s.layers.len()).map(|i| AttachmentPoint {
                    path: s.point(i),
                    channels: self.cfg.hidden_dim,
                    site: Site::AcousticConv,
                })
            })
            .collect()
    }

    fn check_id(kind: &'static str, id: u32, rows: usize) -> Result<()> {
        if id as usize >= rows {
            return Err(Error::UnknownId {
                kind,
                id: format!("{id} (table has {rows} rows)"),
            });
        }
        Ok(())
    }

    /// Per-phoneme hidden states `(1, hidden, N)`.
    pub fn encode(&self, phoneme_ids: &[u32], speaker: u32, language: u32, adapters: &AdapterSet) -> Result<Tensor> {
        if phoneme_ids.is_empty() {
            return Err(Error::InvalidInput("empty phoneme sequence".into()));
        }
        for &p in phoneme_ids {
            Self::check_id("phoneme", p, self.phoneme_embedding.rows())?;
        }
        Self::check_id("speaker", speaker, self.speaker_table.rows())?;
        Self::check_id("language", language, self.language_table.rows())?;
        let emb = self.phoneme_embedding.lookup(phoneme_ids)?;
        let pos = sinusoidal_positions(phoneme_ids.len(), self.cfg.embed_dim, emb.dtype())?;
        let cond = (self.speaker_table.lookup(&[speaker])? + self.language_table.lookup(&[language])?)?;
        let x = (emb + pos)?.broadcast_add(&cond)?;
        let x = x.t()?.unsqueeze(0)?;
        self.encoder.forward(&x, adapters)
    }

    /// `(N,)` log-durations.
    pub fn predict_duration(&self, hidden: &Tensor, adapters: &AdapterSet) -> Result<Tensor> {
        if hidden.dim(2)? == 0 {
            return shape_err("duration predictor needs at least one phoneme");
        }
        let h = self.duration.forward(hidden, adapters)?;
        Ok(self.duration_head.forward(&h)?.flatten_all()?)
    }

    /// `(frames, 256)` pitch logits from frame-level states.
    pub fn predict_pitch(&self, frame_hidden: &Tensor, adapters: &AdapterSet) -> Result<Tensor> {
        let frames = frame_hidden.dim(2)?;
        if frames == 0 {
            return Ok(Tensor::zeros((0, self.cfg.pitch_bins), frame_hidden.dtype(), frame_hidden.device())?);
        }
        let h = self.pitch.forward(frame_hidden, adapters)?;
        Ok(self.pitch_head.forward(&h)?.squeeze(0)?.t()?)
    }

    /// `(1, hidden, frames)` latents.
    pub fn decode(&self, frame_hidden: &Tensor, adapters: &AdapterSet) -> Result<Tensor> {
        if frame_hidden.dim(2)? == 0 {
            return shape_err("decoder needs at least one frame");
        }
        self.decoder.forward(frame_hidden, adapters)
    }

    pub fn forward(
        &self,
        phoneme_ids: &[u32],
        speaker: u32,
        language: u32,
        targets: Targets<'_>,
        adapters: &AdapterSet,
    ) -> Result<AcousticOutput> {
        let hidden = self.encode(phoneme_ids, speaker, language, adapters)?;
        let log_durations = self.predict_duration(&hidden, adapters)?;
        let durations = match targets.durations {
            Some(d) => d.to_vec(),
            None => log_durations
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?
                .into_iter()
                .map(duration_frames)
                .collect(),
        };
        let frame_hidden = length_regulate(&hidden, &durations)?;
        let pitch_logits = self.predict_pitch(&frame_hidden, adapters)?;
        let pitch_bins: Vec<u32> = match targets.pitch_bins {
            Some(p) => {
                if p.len() != frame_hidden.dim(2)? {
                    return shape_err(format!("{} pitch targets for {} frames", p.len(), frame_hidden.dim(2)?));
                }
                p.iter().map(|&b| b as u32).collect()
            }
            None => pitch_logits.argmax(D::Minus1)?.to_vec1::<u32>()?,
        };
        if pitch_bins.iter().any(|&b| b as usize >= PITCH_BINS) {
            return Err(Error::InvalidInput("pitch bin out of range".into()));
        }
        let pitch = self.pitch_embedding.lookup(&pitch_bins)?.t()?.unsqueeze(0)?;
        let latents = self.decode(&(frame_hidden + pitch)?, adapters)?;
        Ok(AcousticOutput {
            latents,
            log_durations,
            pitch_logits,
            durations,
            pitch_bins,
        })
    }
}

impl Parameterized for AcousticModel {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.phoneme_embedding.visit_params(&join(prefix, "phoneme_embedding"), out);
        self.speaker_table.visit_params(&join(prefix, "speaker_table"), out);
        self.language_table.visit_params(&join(prefix, "language_table"), out);
        self.encoder.visit_params(&join(prefix, "encoder"), out);
        self.duration.visit_params(&join(prefix, "duration"), out);
        self.duration_head.visit_params(&join(prefix, "duration_head"), out);
        self.pitch.visit_params(&join(prefix, "pitch"), out);
        self.pitch_head.visit_params(&join(prefix, "pitch_head"), out);
        self.pitch_embedding.visit_params(&join(prefix, "pitch_embedding"), out);
        self.decoder.visit_params(&join(prefix, "decoder"), out);
    }
}
