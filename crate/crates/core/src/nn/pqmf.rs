//! Pseudo-QMF filterbank for multi-band synthesis.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};

use super::layers::zero_stuff;
use crate::error::Result;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
        })
        .collect()
}

/// Kaiser-windowed low-pass prototype with `taps + 1` coefficients.
fn prototype(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let wc = PI * cutoff;
    let win = kaiser(taps + 1, beta);
    (0..=taps)
        .map(|n| {
            let m = n as f64 - taps as f64 / 2.0;
            let h = if m == 0.0 { wc / PI } else { (wc * m).sin() / (PI * m) };
            h * win[n]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Pqmf {
    pub subbands: usize,
    pub taps: usize,
    /// `(N, 1, taps + 1)`
    analysis: Tensor,
    /// `(1, N, taps + 1)`, scaled by `N` to undo the zero-stuffing gain loss.
    synthesis: Tensor,
}

impl Pqmf {
    pub fn new(subbands: usize, taps: usize, cutoff: f64, beta: f64, dtype: DType, device: &Device) -> Result<Self> {
        let h = prototype(taps, cutoff, beta);
        let n = subbands;
        let mut ana = vec![0.0; n * (taps + 1)];
        let mut syn = vec![0.0; n * (taps + 1)];
        for k in 0..n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for (i, hi) in h.iter().enumerate() {
                let arg = (2 * k + 1) as f64 * PI / (2 * n) as f64 * (i as f64 - taps as f64 / 2.0);
                ana[k * (taps + 1) + i] = 2.0 * hi * (arg + sign * PI / 4.0).cos();
                syn[k * (taps + 1) + i] = 2.0 * hi * (arg - sign * PI / 4.0).cos() * n as f64;
            }
        }
        Ok(Self {
            subbands,
            taps,
            analysis: Tensor::from_vec(ana, (n, 1, taps + 1), device)?.to_dtype(dtype)?,
            synthesis: Tensor::from_vec(syn, (1, n, taps + 1), device)?.to_dtype(dtype)?,
        })
    }

    /// `(B, 1, T) -> (B, N, T / N)`.
    pub fn analyze(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv1d(&self.analysis, self.taps / 2, self.subbands, 1, 1)?)
    }

    /// `(B, N, T / N) -> (B, 1, T)`.
    pub fn synthesize(&self, x: &Tensor) -> Result<Tensor> {
        let up = zero_stuff(x, self.subbands)?;
        Ok(up.conv1d(&self.synthesis, self.taps / 2, 1, 1, 1)?)
    }
}
