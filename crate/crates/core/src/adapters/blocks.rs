//! Adapter building blocks.

use candle_core::{Tensor, D};

use super::{BottleneckAdapterSpec, ConvAdapterSpec};
use crate::error::{shape_err, Result};
use crate::nn::layers::{ChannelNorm, Conv1d, ConvCfg, Dense};
use crate::nn::{join, Init, NamedParams, Parameterized};

fn check_channels(x: &Tensor, want: usize) -> Result<()> {
    let c = x.dim(1)?;
    if c != want {
        return shape_err(format!("adapter expects {want} channels, got {c}"));
    }
    Ok(())
}

/// `h' = W_up relu(W_down h + b_down) + b_up + h`, applied at every time step
/// of a `(B, C, T)` input.
#[derive(Debug, Clone)]
pub struct BottleneckAdapter {
    pub down: Dense,
    pub up: Dense,
}

impl BottleneckAdapter {
    /// The up-projection starts at zero, so the adapter is the identity.
    pub fn new(init: &mut Init, spec: &BottleneckAdapterSpec) -> Result<Self> {
        Ok(Self {
            down: Dense::new(init, spec.input_dim, spec.bottleneck_dim)?,
            up: Dense::new_zeros(init, spec.bottleneck_dim, spec.input_dim)?,
        })
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        check_channels(h, self.down.in_dim())?;
        let z = self.down.forward(h)?.relu()?;
        Ok((self.up.forward(&z)? + h)?)
    }
}

impl Parameterized for BottleneckAdapter {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.down.visit_params(&join(prefix, "down"), out);
        self.up.visit_params(&join(prefix, "up"), out);
    }
}

/// Squeeze-and-excitation gate: `x * sigmoid(W2 relu(W1 mean_t(x)))`.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Dense,
    pub expand: Dense,
}

impl SqueezeExcite {
    pub fn new(init: &mut Init, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            reduce: Dense::new(init, channels, hidden)?,
            expand: Dense::new(init, hidden, channels)?,
        })
    }

    /// Per-channel gate in `(0, 1)`, shape `(B, C, 1)`.
    pub fn gate(&self, x: &Tensor) -> Result<Tensor> {
        let squeezed = x.mean_keepdim(D::Minus1)?;
        let e = self.expand.forward(&self.reduce.forward(&squeezed)?.relu()?)?;
        Ok((e.neg()?.exp()? + 1.0)?.recip()?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.gate(x)?)?)
    }
}

impl Parameterized for SqueezeExcite {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.reduce.visit_params(&join(prefix, "reduce"), out);
        self.expand.visit_params(&join(prefix, "expand"), out);
    }
}

/// conv -> norm -> relu -> depthwise conv -> norm -> relu -> conv -> SE, plus the input.
#[derive(Debug, Clone)]
pub struct ConvAdapter {
    pub conv_in: Conv1d,
    pub norm_in: Option<ChannelNorm>,
    pub depthwise: Conv1d,
    pub norm_mid: Option<ChannelNorm>,
    pub conv_out: Conv1d,
    pub se: SqueezeExcite,
}

impl ConvAdapter {
    /// The output convolution starts at zero, so the adapter is the identity.
    pub fn new(init: &mut Init, spec: &ConvAdapterSpec) -> Result<Self> {
        let c = spec.channels;
        let [k1, k2, k3] = spec.kernel_sizes;
        let norm = |init: &Init| -> Result<Option<ChannelNorm>> {
            if spec.layer_norm {
                Ok(Some(ChannelNorm::new(init, c)?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            conv_in: Conv1d::new(init, c, c, k1, ConvCfg::same(k1, 1))?,
            norm_in: norm(init)?,
            depthwise: Conv1d::new(init, c, c, k2, ConvCfg::depthwise(k2, c))?,
            norm_mid: norm(init)?,
            conv_out: Conv1d::new_zeros(init, c, c, k3, ConvCfg::same(k3, 1))?,
            se: SqueezeExcite::new(init, c, spec.se_reduction)?,
        })
    }

    /// Output of the three-conv stack before the SE gate.
    pub fn conv_stack(&self, h: &Tensor) -> Result<Tensor> {
        let mut y = self.conv_in.forward(h)?;
        if let Some(n) = &self.norm_in {
            y = n.forward(&y)?;
        }
        y = self.depthwise.forward(&y.relu()?)?;
        if let Some(n) = &self.norm_mid {
            y = n.forward(&y)?;
        }
        self.conv_out.forward(&y.relu()?)
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        check_channels(h, self.conv_in.weight.dims()[1])?;
        let y = self.se.forward(&self.conv_stack(h)?)?;
        Ok((y + h)?)
    }
}

impl Parameterized for ConvAdapter {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv_in.visit_params(&join(prefix, "conv_in"), out);
        if let Some(n) = &self.norm_in {
            n.visit_params(&join(prefix, "norm_in"), out);
        }
        self.depthwise.visit_params(&join(prefix, "depthwise"), out);
        if let Some(n) = &self.norm_mid {
            n.visit_params(&join(prefix, "norm_mid"), out);
        }
        self.conv_out.visit_params(&join(prefix, "conv_out"), out);
        self.se.visit_params(&join(prefix, "se"), out);
    }
}

#[derive(Debug, Clone)]
pub enum Adapter {
    Bottleneck(BottleneckAdapter),
    Conv(ConvAdapter),
}

impl Adapter {
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        match self {
            Adapter::Bottleneck(a) => a.forward(h),
            Adapter::Conv(a) => a.forward(h),
        }
    }
}

impl Parameterized for Adapter {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        match self {
            Adapter::Bottleneck(a) => a.visit_params(prefix, out),
            Adapter::Conv(a) => a.visit_params(prefix, out),
        }
    }
}
