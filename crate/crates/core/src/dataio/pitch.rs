//! 256-way pitch codebook.
//!
//! Voiced frames are standardized with the speaker's statistics, clipped to
//! `[-3, 3]` and mapped uniformly onto bins `1..=255`; bin 0 is reserved for
//! unvoiced frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PITCH_BINS: usize = 256;
pub const UNVOICED_BIN: u8 = 0;
pub const Z_CLIP: f64 = 3.0;

const VOICED_STEPS: f64 = (PITCH_BINS - 2) as f64;

/// Bin width in standardized (z) units.
pub const BIN_WIDTH: f64 = 2.0 * Z_CLIP / VOICED_STEPS;

/// Mean and standard deviation of a speaker's voiced f0 values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub mean: f64,
    pub std: f64,
}

impl PitchStats {
    /// Statistics over the voiced (`> 0`) values.
    pub fn from_f0<'a>(f0: impl IntoIterator<Item = &'a f32>) -> Result<Self> {
        let voiced: Vec<f64> = f0.into_iter().filter(|&&v| v > 0.0).map(|&v| v as f64).collect();
        if voiced.is_empty() {
            return Err(Error::DegenerateStats(0.0));
        }
        let n = voiced.len() as f64;
        let mean = voiced.iter().sum::<f64>() / n;
        let std = (voiced.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 0.0) {
            return Err(Error::DegenerateStats(std));
        }
        Ok(Self { mean, std })
    }
}

/// Bin index of one standardized value.
fn bin_of_z(z: f64) -> u8 {
    let z = z.clamp(-Z_CLIP, Z_CLIP);
    1 + ((z + Z_CLIP) / BIN_WIDTH + 0.5).floor() as u8
}

/// Per-frame pitch bins in `0..=255`.
pub fn quantize_pitch(f0: &[f32], stats: &PitchStats) -> Result<Vec<u8>> {
    if !(stats.std > 0.0) {
        return Err(Error::DegenerateStats(stats.std));
    }
    f0.iter()
        .map(|&v| {
            if !(v >= 0.0) {
                Err(Error::InvalidInput(format!("f0 must be >= 0, got {v}")))
            } else if v == 0.0 {
                Ok(UNVOICED_BIN)
            } else {
                Ok(bin_of_z((v as f64 - stats.mean) / stats.std))
            }
        })
        .collect()
}

/// Standardized pitch at the centre of `bin`; `None` for the unvoiced bin.
pub fn dequantize_pitch(bin: u8) -> Option<f64> {
    (bin != UNVOICED_BIN).then(|| (bin - 1) as f64 * BIN_WIDTH - Z_CLIP)
}
