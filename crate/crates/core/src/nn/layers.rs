//! Channel-first (`batch x channels x time`) layers.

use candle_core::{Tensor, Var, D};

use super::{join, Init, NamedParams, Parameterized};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct ConvCfg {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvCfg {
    /// Stride-1 convolution that preserves length.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups: 1,
        }
    }

    pub fn depthwise(kernel: usize, channels: usize) -> Self {
        Self {
            groups: channels,
            ..Self::same(kernel, 1)
        }
    }
}

/// 1-D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub cfg: ConvCfg,
}

impl Conv1d {
    pub fn new(init: &mut Init, in_ch: usize, out_ch: usize, kernel: usize, cfg: ConvCfg) -> Result<Self> {
        let fan_in = in_ch / cfg.groups * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: init.uniform(&[out_ch, in_ch / cfg.groups, kernel], bound)?,
            bias: Some(init.uniform(&[out_ch], bound)?),
            cfg,
        })
    }

    /// Same layout, all weights and biases zero.
    pub fn new_zeros(init: &Init, in_ch: usize, out_ch: usize, kernel: usize, cfg: ConvCfg) -> Result<Self> {
        Ok(Self {
            weight: init.zeros(&[out_ch, in_ch / cfg.groups, kernel])?,
            bias: Some(init.zeros(&[out_ch])?),
            cfg,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        let t = x.dim(2)?;
        let k = self.weight.dim(2)?;
        let span = c.dilation * (k - 1) + 1;
        if t + 2 * c.padding < span {
            return crate::error::shape_err(format!("input of length {t} is shorter than the kernel span {span}"));
        }
        let l_out = (t + 2 * c.padding - span) / c.stride + 1;
        if c.groups > 1 && c.stride == 1 && c.groups == self.weight.dim(0)? && c.groups == x.dim(1)? {
            return self.depthwise(x, k, l_out);
        }
        // The backward pass of a padded convolution underflows when the
        // padding exceeds the output extent, so pad explicitly in that case.
        // Likewise, a strided backward pass mis-sizes the input gradient when
        // trailing samples fall outside every window; those are cropped.
        let y = if c.groups == 1 {
            let x = x.pad_with_zeros(2, c.padding, c.padding)?;
            super::unfold::conv1d(&x, self.weight.as_tensor(), c.stride, c.dilation)?
        } else if (l_out - 1) * c.stride < 2 * c.padding || c.stride > 1 {
            let x = x.pad_with_zeros(2, c.padding, c.padding)?;
            crop_uncovered(&x, 2, span, c.stride)?.conv1d(self.weight.as_tensor(), 0, c.stride, c.dilation, c.groups)?
        } else {
            x.conv1d(self.weight.as_tensor(), c.padding, c.stride, c.dilation, c.groups)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1))?)?),
            None => Ok(y),
        }
    }
}

impl Conv1d {
    /// Depthwise convolution as a sum of shifted, per-channel scaled copies;
    /// the library splits grouped convolutions into one call per group.
    fn depthwise(&self, x: &Tensor, k: usize, l_out: usize) -> Result<Tensor> {
        let c = &self.cfg;
        let channels = c.groups;
        let x = x.pad_with_zeros(2, c.padding, c.padding)?;
        let w = self.weight.as_tensor().reshape((channels, k))?;
        let mut acc: Option<Tensor> = None;
        for j in 0..k {
            let tap = w.narrow(1, j, 1)?.reshape((1, channels, 1))?;
            let term = x.narrow(2, j * c.dilation, l_out)?.broadcast_mul(&tap)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        let y = acc.expect("kernel has at least one tap");
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1))?)?),
            None => Ok(y),
        }
    }

    /// Reference path through the library convolution, for tests.
    #[cfg(test)]
    pub(crate) fn forward_direct(&self, x: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        let y = x.conv1d(self.weight.as_tensor(), c.padding, c.stride, c.dilation, c.groups)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1))?)?),
            None => Ok(y),
        }
    }
}

impl Parameterized for Conv1d {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

/// Drops the trailing entries of axis `dim` that no window of extent `span`
/// and the given stride reaches.
pub fn crop_uncovered(x: &Tensor, dim: usize, span: usize, stride: usize) -> Result<Tensor> {
    let len = x.dim(dim)?;
    let used = (len - span) / stride * stride + span;
    if used == len {
        Ok(x.clone())
    } else {
        Ok(x.narrow(dim, 0, used)?)
    }
}

/// Inserts `factor - 1` zeros after every time step: `(B, C, T) -> (B, C, T * factor)`.
pub fn zero_stuff(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, t) = x.dims3()?;
    let zeros = Tensor::zeros((b, c, t, factor - 1), x.dtype(), x.device())?;
    Ok(Tensor::cat(&[&x.unsqueeze(3)?, &zeros], 3)?.reshape((b, c, t * factor))?)
}

/// Transposed convolution with kernel `2 * stride` and padding `stride / 2`,
/// so that `T` input steps become exactly `T * stride` output steps.
///
/// Realized as zero-stuffing followed by an ordinary convolution, which spans
/// the same function class and keeps the op differentiable.
#[derive(Debug, Clone)]
pub struct Upsample1d {
    pub conv: Conv1d,
    pub stride: usize,
}

impl Upsample1d {
    pub fn new(init: &mut Init, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let kernel = 2 * stride;
        let pad = stride / 2;
        // After zero-stuffing only kernel / stride = 2 taps see non-zero input.
        let bound = 1.0 / ((in_ch * 2) as f64).sqrt();
        let conv = Conv1d {
            weight: init.uniform(&[out_ch, in_ch, kernel], bound)?,
            bias: Some(init.uniform(&[out_ch], bound)?),
            cfg: ConvCfg {
                stride: 1,
                padding: kernel - 1 - pad,
                dilation: 1,
                groups: 1,
            },
        };
        Ok(Self { conv, stride })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(2)?;
        let stuffed = zero_stuff(x, self.stride)?.narrow(2, 0, (t - 1) * self.stride + 1)?;
        self.conv.forward(&stuffed)
    }
}

impl Parameterized for Upsample1d {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv.visit_params(prefix, out);
    }
}

/// Layer normalization across the channel axis of a `(B, C, T)` tensor.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl ChannelNorm {
    pub fn new(init: &Init, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(&[channels], 1.0)?,
            beta: init.zeros(&[channels])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let g = self.gamma.as_tensor().reshape((1, (), 1))?;
        let b = self.beta.as_tensor().reshape((1, (), 1))?;
        Ok(normed.broadcast_mul(&g)?.broadcast_add(&b)?)
    }
}

impl Parameterized for ChannelNorm {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

/// Dense layer mapping the channel axis of `(B, C_in, T)` to `(B, C_out, T)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn new(init: &mut Init, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: init.uniform(&[out_dim, in_dim], bound)?,
            bias: init.uniform(&[out_dim], bound)?,
        })
    }

    pub fn new_zeros(init: &Init, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: init.zeros(&[out_dim, in_dim])?,
            bias: init.zeros(&[out_dim])?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.weight.as_tensor().unsqueeze(0)?.broadcast_matmul(x)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, (), 1))?)?)
    }
}

impl Parameterized for Dense {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Lookup table of `rows x dim` vectors.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Var,
}

impl Embedding {
    pub fn new(init: &mut Init, rows: usize, dim: usize, std: f64) -> Result<Self> {
        Ok(Self {
            table: init.normal(&[rows, dim], std)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.table.dims()[0]
    }

    /// `(len, dim)` rows for the given ids.
    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        let idx = Tensor::new(ids, self.table.device())?;
        Ok(self.table.as_tensor().index_select(&idx, 0)?)
    }
}

impl Parameterized for Embedding {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((prefix.to_string(), self.table.clone()));
    }
}

/// Mean over the time axis, keeping it: `(B, C, T) -> (B, C, 1)`.
pub fn time_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim(D::Minus1)?)
}
