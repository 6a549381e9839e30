//! Training objectives.
//!
//! Every function takes and returns tensors so the same code drives training
//! (f32) and the finite-difference checks (f64).

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::acoustic::duration_target;
use crate::config::{LossWeights, Resolution};
use crate::dataio::PITCH_BINS;
use crate::error::{shape_err, Error, Result};
use crate::nn::spectral::{MelSpectrogram, Stft};
use crate::vocoder::DiscOutput;

/// Power floor inside the STFT loss.
pub const STFT_MIN_POWER: f64 = 1e-7;

/// Log-domain targets for ground-truth frame counts.
pub fn duration_targets(durations: &[u32], dtype: DType) -> Result<Tensor> {
    let v: Vec<f64> = durations.iter().map(|&d| duration_target(d)).collect();
    Ok(Tensor::from_vec(v, durations.len(), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Mean squared error between predicted and target log-durations.
pub fn duration_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return shape_err(format!("duration loss: {:?} vs {:?}", pred.dims(), target.dims()));
    }
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// Row-wise log-softmax of a `(N, K)` matrix.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Mean per-frame cross-entropy of `(frames, 256)` logits against bins.
pub fn pitch_loss(logits: &Tensor, bins: &[u8]) -> Result<Tensor> {
    let (frames, k) = logits.dims2()?;
    if k != PITCH_BINS || frames != bins.len() {
        return shape_err(format!("pitch loss: logits {:?} vs {} targets", logits.dims(), bins.len()));
    }
    if frames == 0 {
        return shape_err("pitch loss over zero frames");
    }
    let idx = Tensor::from_vec(bins.iter().map(|&b| b as u32).collect::<Vec<_>>(), (frames, 1), logits.device())?;
    let picked = log_softmax(logits)?.gather(&idx, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

fn check_nonempty(scores: &[&Tensor]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no discriminator scores".into()));
    }
    Ok(())
}

/// Least-squares generator loss, averaged over discriminators.
pub fn generator_adversarial_loss(fake: &[&Tensor]) -> Result<Tensor> {
    check_nonempty(fake)?;
    let mut acc = Vec::with_capacity(fake.len());
    for s in fake {
        acc.push((*s - 1.0)?.sqr()?.mean_all()?);
    }
    Ok((Tensor::stack(&acc, 0)?.mean_all())?)
}

/// Least-squares discriminator loss, averaged over discriminators.
pub fn discriminator_adversarial_loss(real: &[&Tensor], fake: &[&Tensor]) -> Result<Tensor> {
    check_nonempty(real)?;
    if real.len() != fake.len() {
        return shape_err(format!("{} real vs {} fake score maps", real.len(), fake.len()));
    }
    let mut acc = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        acc.push(((*r - 1.0)?.sqr()?.mean_all()? + f.sqr()?.mean_all()?)?);
    }
    Ok(Tensor::stack(&acc, 0)?.mean_all()?)
}

/// `(L_G, L_D)` from paired score maps.
pub fn adversarial_losses(real: &[&Tensor], fake: &[&Tensor]) -> Result<(Tensor, Tensor)> {
    Ok((generator_adversarial_loss(fake)?, discriminator_adversarial_loss(real, fake)?))
}

/// Mean absolute feature difference, averaged over layers then discriminators.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.is_empty() || real.len() != fake.len() {
        return shape_err(format!("{} real vs {} fake feature lists", real.len(), fake.len()));
    }
    let mut per_disc = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        if r.is_empty() || r.len() != f.len() {
            return shape_err(format!("{} real vs {} fake layers", r.len(), f.len()));
        }
        let mut layers = Vec::with_capacity(r.len());
        for (a, b) in r.iter().zip(f) {
            if a.dims() != b.dims() {
                return shape_err(format!("feature shapes {:?} vs {:?}", a.dims(), b.dims()));
            }
            layers.push((a - b)?.abs()?.mean_all()?);
        }
        per_disc.push(Tensor::stack(&layers, 0)?.mean_all()?);
    }
    Ok(Tensor::stack(&per_disc, 0)?.mean_all()?)
}

/// Score maps of a discriminator pass.
pub fn scores(outputs: &[DiscOutput]) -> Vec<&Tensor> {
    outputs.iter().map(|o| &o.scores).collect()
}

/// Feature lists of a discriminator pass, optionally detached.
pub fn features(outputs: &[DiscOutput], detach: bool) -> Vec<Vec<Tensor>> {
    outputs
        .iter()
        .map(|o| {
            o.features
                .iter()
                .map(|f| if detach { f.detach() } else { f.clone() })
                .collect()
        })
        .collect()
}

/// Multi-resolution STFT loss: mean over resolutions of spectral convergence
/// plus mean absolute log-magnitude difference.
#[derive(Debug, Clone)]
pub struct StftLoss {
    pub stfts: Vec<Stft>,
}

impl StftLoss {
    pub fn new(resolutions: &[Resolution], dtype: DType) -> Result<Self> {
        Ok(Self {
            stfts: resolutions
                .iter()
                .map(|&[n, h, w]| Stft::new(n, h, w, dtype, &Device::Cpu))
                .collect::<Result<_>>()?,
        })
    }

    pub fn max_window(&self) -> usize {
        self.stfts.iter().map(|s| s.n_fft).max().unwrap_or(0)
    }

    /// `(B, T)` reference and estimate.
    pub fn forward(&self, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
        if x.dims() != x_hat.dims() {
            return shape_err(format!("STFT loss: {:?} vs {:?}", x.dims(), x_hat.dims()));
        }
        let t = x.dim(D::Minus1)?;
        if t < self.max_window() {
            return Err(Error::InvalidInput(format!(
                "signal of {t} samples is shorter than the largest STFT window {}",
                self.max_window()
            )));
        }
        let mut terms = Vec::with_capacity(self.stfts.len());
        for stft in &self.stfts {
            let m = stft.magnitude(x, STFT_MIN_POWER)?;
            let m_hat = stft.magnitude(x_hat, STFT_MIN_POWER)?;
            let sc = ((&m - &m_hat)?.sqr()?.sum_all()?.sqrt()? / m.sqr()?.sum_all()?.sqrt()?)?;
            let mag = (m.log()? - m_hat.log()?)?.abs()?.mean_all()?;
            terms.push((sc + mag)?);
        }
        Ok(Tensor::stack(&terms, 0)?.mean_all()?)
    }
}

/// L1 distance between log-mel spectrograms of `(B, T)` signals.
pub fn mel_loss(x: &Tensor, x_hat: &Tensor, mel: &MelSpectrogram) -> Result<Tensor> {
    if x.dims() != x_hat.dims() {
        return shape_err(format!("mel loss: {:?} vs {:?}", x.dims(), x_hat.dims()));
    }
    Ok((mel.forward(x)? - mel.forward(x_hat)?)?.abs()?.mean_all()?)
}

/// Scalar value of every generator loss term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub duration: f64,
    pub pitch: f64,
    pub adversarial: f64,
    pub feature_matching: f64,
    pub mel: f64,
    pub stft: f64,
}

impl LossParts {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("duration", self.duration),
            ("pitch", self.pitch),
            ("adversarial", self.adversarial),
            ("feature_matching", self.feature_matching),
            ("mel", self.mel),
            ("stft", self.stft),
        ]
    }
}

/// `L_dur + L_f0 + L_G + λ_FM L_FM + λ_mel L_mel + λ_STFT L_STFT`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    check_finite(parts, None)?;
    Ok(parts.duration
        + parts.pitch
        + parts.adversarial
        + w.fm * parts.feature_matching
        + w.mel * parts.mel
        + w.stft * parts.stft)
}

/// Errors on the first non-finite term.
pub fn check_finite(parts: &LossParts, step: Option<u64>) -> Result<()> {
    for (term, value) in parts.named() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: term.to_string(),
                step,
                value,
            });
        }
    }
    Ok(())
}

/// Same weighted sum over loss tensors, for backpropagation.
pub fn total_loss_tensor(
    duration: &Tensor,
    pitch: &Tensor,
    adversarial: &Tensor,
    feature_matching: &Tensor,
    mel: &Tensor,
    stft: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let sum = ((duration + pitch)? + adversarial)?;
    let sum = (sum + (feature_matching * w.fm)?)?;
    let sum = (sum + (mel * w.mel)?)?;
    Ok((sum + (stft * w.stft)?)?)
}

/// One step's losses: the generator terms, their weighted total, and the
/// discriminator loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub parts: LossParts,
    pub total: f64,
    pub discriminator: f64,
}

impl LossReport {
    pub fn new(parts: LossParts, w: &LossWeights, discriminator: f64) -> Result<Self> {
        Ok(Self {
            total: total_loss(&parts, w)?,
            parts,
            discriminator,
        })
    }

    /// `(name, value)` rows for the metrics log.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows: Vec<_> = self.parts.named().to_vec();
        rows.push(("total", self.total));
        rows.push(("discriminator", self.discriminator));
        rows
    }
}
