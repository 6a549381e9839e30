//! Log-mel features used as training targets and recognizer inputs.

use candle_core::{DType, Device, Tensor};

use crate::config::AudioConfig;
use crate::error::{Error, Result};
use crate::nn::spectral::MelSpectrogram;

/// Reusable mel front end (the DFT basis is built once).
#[derive(Debug, Clone)]
pub struct MelExtractor {
    mel: MelSpectrogram,
    win_length: usize,
}

impl MelExtractor {
    pub fn new(cfg: &AudioConfig) -> Result<Self> {
        Ok(Self {
            mel: MelSpectrogram::new(cfg, DType::F32, &Device::Cpu)?,
            win_length: cfg.win_length,
        })
    }

    /// `frames x mel_bins` log-mel matrix with `frames == ceil(len / hop)`.
    pub fn compute(&self, waveform: &[f32]) -> Result<Tensor> {
        if waveform.is_empty() {
            return Err(Error::InvalidInput("cannot compute mel of an empty waveform".into()));
        }
        if waveform.len() < self.win_length {
            return Err(Error::InvalidInput(format!(
                "waveform has {} samples, shorter than win_length {}",
                waveform.len(),
                self.win_length
            )));
        }
        let x = Tensor::from_slice(waveform, (1, waveform.len()), &Device::Cpu)?;
        Ok(self.mel.forward(&x)?.squeeze(0)?)
    }
}

/// One-shot convenience wrapper around [`MelExtractor`].
pub fn compute_mel(waveform: &[f32], cfg: &AudioConfig) -> Result<Tensor> {
    MelExtractor::new(cfg)?.compute(waveform)
}
