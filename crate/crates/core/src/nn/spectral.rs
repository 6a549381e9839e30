//! Differentiable short-time Fourier analysis.
//!
//! Frames are gathered with `index_select` and projected onto a windowed DFT
//! basis with a matmul, so gradients flow back to the waveform. Frame `i` is
//! centred on sample `i * hop` (zero padding at both ends) and a signal of
//! `T` samples yields `ceil(T / hop)` frames.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};

use crate::config::AudioConfig;
use crate::error::{shape_err, Result};

/// Floor applied to mel energies before the logarithm.
pub const LOG_MEL_FLOOR: f64 = 1e-5;

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    /// `(win, 2 * bins)`: windowed cosines followed by windowed negated sines.
    basis: Tensor,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize, win: usize, dtype: DType, device: &Device) -> Result<Self> {
        assert!(win <= n_fft && hop > 0, "invalid STFT geometry");
        let bins = n_fft / 2 + 1;
        let window = hann_window(win);
        let mut basis = vec![0.0f64; win * 2 * bins];
        for (n, w) in window.iter().enumerate() {
            for k in 0..bins {
                let phase = 2.0 * PI * (k * n % n_fft) as f64 / n_fft as f64;
                basis[n * 2 * bins + k] = w * phase.cos();
                basis[n * 2 * bins + bins + k] = -w * phase.sin();
            }
        }
        let basis = Tensor::from_vec(basis, (win, 2 * bins), device)?.to_dtype(dtype)?;
        Ok(Self { n_fft, hop, win, basis })
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// `(B, T) -> (B, F, win)` centred frames.
    pub fn frames(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = x.dims2()?;
        if t == 0 {
            return shape_err("cannot frame an empty signal");
        }
        let left = self.win / 2;
        let padded = x.pad_with_zeros(1, left, self.win)?;
        let f = self.num_frames(t);
        let idx: Vec<u32> = (0..f)
            .flat_map(|i| (0..self.win).map(move |n| (i * self.hop + n) as u32))
            .collect();
        let idx = Tensor::from_vec(idx, f * self.win, x.device())?;
        Ok(padded.index_select(&idx, 1)?.reshape((b, f, self.win))?)
    }

    /// Real and imaginary parts, each `(B, F, bins)`.
    pub fn spectrum(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let frames = self.frames(x)?;
        let (b, f, w) = frames.dims3()?;
        let spec = frames.reshape((b * f, w))?.matmul(&self.basis)?.reshape((b, f, ()))?;
        let bins = self.bins();
        Ok((spec.narrow(2, 0, bins)?, spec.narrow(2, bins, bins)?))
    }

    /// `sqrt(max(re^2 + im^2, min_power))`, shape `(B, F, bins)`.
    pub fn magnitude(&self, x: &Tensor, min_power: f64) -> Result<Tensor> {
        let (re, im) = self.spectrum(x)?;
        let power = (re.sqr()? + im.sqr()?)?;
        Ok(power.maximum(min_power)?.sqrt()?)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the `n_mels` triangular filters.
pub fn mel_center_frequencies(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Peak-normalized triangular mel filterbank, `bins x n_mels` row-major.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; bins * n_mels];
    for k in 0..bins {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[k * n_mels + m] = w;
        }
    }
    fb
}

/// Log-magnitude mel spectrogram.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub stft: Stft,
    filterbank: Tensor,
    pub mel_bins: usize,
}

impl MelSpectrogram {
    pub fn new(cfg: &AudioConfig, dtype: DType, device: &Device) -> Result<Self> {
        let stft = Stft::new(cfg.n_fft, cfg.hop_length, cfg.win_length, dtype, device)?;
        let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.mel_bins, cfg.fmin, cfg.fmax);
        let filterbank = Tensor::from_vec(fb, (stft.bins(), cfg.mel_bins), device)?.to_dtype(dtype)?;
        Ok(Self {
            stft,
            filterbank,
            mel_bins: cfg.mel_bins,
        })
    }

    /// `(B, T) -> (B, ceil(T / hop), mel_bins)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mag = self.stft.magnitude(x, 1e-18)?;
        let (b, f, k) = mag.dims3()?;
        let mel = mag.reshape((b * f, k))?.matmul(&self.filterbank)?.reshape((b, f, ()))?;
        Ok(mel.maximum(LOG_MEL_FLOOR)?.log()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_is_ceil() {
        let stft = Stft::new(64, 16, 32, DType::F64, &Device::Cpu).unwrap();
        for (len, want) in [(16, 1), (17, 2), (160, 10), (161, 11)] {
            let x = Tensor::zeros((1, len), DType::F64, &Device::Cpu).unwrap();
            assert_eq!(stft.frames(&x).unwrap().dims(), &[1, want, 32]);
        }
    }

    #[test]
    fn frames_are_centred() {
        let stft = Stft::new(8, 4, 8, DType::F64, &Device::Cpu).unwrap();
        let x = Tensor::arange(1f64, 13.0, &Device::Cpu).unwrap().unsqueeze(0).unwrap();
        let f = stft.frames(&x).unwrap().to_vec3::<f64>().unwrap();
        // frame 1 is centred on sample 4 (value 5): covers samples 0..8
        assert_eq!(f[0][1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(f[0][0][..4], [0.0; 4]);
    }

    #[test]
    fn filterbank_peaks_at_centres() {
        let fb = mel_filterbank(16000, 1024, 80, 0.0, 8000.0);
        let centres = mel_center_frequencies(80, 0.0, 8000.0);
        for m in [10, 40, 70] {
            let k = (centres[m] * 1024.0 / 16000.0).round() as usize;
            let col: Vec<f64> = (0..80).map(|j| fb[k * 80 + j]).collect();
            let arg = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(arg, m);
        }
    }
}
