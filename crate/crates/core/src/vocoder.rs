//! Multi-band GAN vocoder and its multi-period / multi-resolution
//! discriminators.

use candle_core::{DType, Device, Tensor, Var};

use crate::adapters::{AdapterSet, AttachmentPoint, Site};
use crate::config::{DiscriminatorConfig, Resolution, VocoderConfig};
use crate::error::{shape_err, Error, Result};
use crate::nn::layers::{Conv1d, ConvCfg, Upsample1d};
use crate::nn::pqmf::Pqmf;
use crate::nn::spectral::Stft;
use crate::nn::{join, leaky_relu, Init, NamedParams, Parameterized};

const SLOPE: f64 = 0.2;

/// `x + conv1x1(lrelu(dilated_conv3(lrelu(x))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub dilated: Conv1d,
    pub project: Conv1d,
}

impl ResidualBlock {
    fn new(init: &mut Init, channels: usize, dilation: usize) -> Result<Self> {
        Ok(Self {
            dilated: Conv1d::new(init, channels, channels, 3, ConvCfg::same(3, dilation))?,
            project: Conv1d::new(init, channels, channels, 1, ConvCfg::same(1, 1))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.dilated.forward(&leaky_relu(x, SLOPE)?)?;
        let y = self.project.forward(&leaky_relu(&y, SLOPE)?)?;
        Ok((x + y)?)
    }
}

impl Parameterized for ResidualBlock {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.dilated.visit_params(&join(prefix, "dilated"), out);
        self.project.visit_params(&join(prefix, "project"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub upsample: Upsample1d,
    pub blocks: Vec<ResidualBlock>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: VocoderConfig,
    pub conv_pre: Conv1d,
    pub stages: Vec<Stage>,
    pub conv_post: Conv1d,
    pub pqmf: Option<Pqmf>,
}

impl Generator {
    pub fn new(init: &mut Init, cfg: &VocoderConfig, latent_dim: usize) -> Result<Self> {
        let conv_pre = Conv1d::new(init, latent_dim, cfg.pre_channels, 7, ConvCfg::same(7, 1))?;
        let mut stages = Vec::new();
        let mut ch = cfg.pre_channels;
        for (&factor, &out) in cfg.upsample_factors.iter().zip(&cfg.stage_channels) {
            let upsample = Upsample1d::new(init, ch, out, factor)?;
            let blocks = cfg
                .residual_dilations
                .iter()
                .map(|&d| ResidualBlock::new(init, out, d))
                .collect::<Result<_>>()?;
            stages.push(Stage { upsample, blocks });
            ch = out;
        }
        let conv_post = Conv1d::new(init, ch, cfg.sub_bands, 7, ConvCfg::same(7, 1))?;
        let pqmf = if cfg.sub_bands > 1 {
            Some(Pqmf::new(
                cfg.sub_bands,
                cfg.pqmf_taps,
                cfg.pqmf_cutoff,
                cfg.pqmf_beta,
                init.dtype,
                &init.device,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            conv_pre,
            stages,
            conv_post,
            pqmf,
        })
    }

    pub fn upsample_point(stage: usize) -> String {
        format!("vocoder.stage{stage}.upsample")
    }

    pub fn residual_point(stage: usize, block: usize) -> String {
        format!("vocoder.stage{stage}.res{block}")
    }

    pub fn attachment_points(&self) -> Vec<AttachmentPoint> {
        let mut out = Vec::new();
        for (i, (s, &ch)) in self.stages.iter().zip(&self.cfg.stage_channels).enumerate() {
            out.push(AttachmentPoint {
                path: Self::upsample_point(i),
                channels: ch,
                site: Site::VocoderUpsample,
            });
            for j in 0..s.blocks.len() {
                out.push(AttachmentPoint {
                    path: Self::residual_point(i, j),
                    channels: ch,
                    site: Site::VocoderResidual,
                });
            }
        }
        out
    }

    /// Samples per latent frame.
    pub fn hop(&self) -> usize {
        self.cfg.upsample_product() * self.cfg.sub_bands
    }

    /// `(B, latent_dim, F) -> (B, 1, F * hop)`.
    pub fn forward(&self, latents: &Tensor, adapters: &AdapterSet) -> Result<Tensor> {
        if latents.dim(2)? == 0 {
            return shape_err("vocoder needs at least one latent frame");
        }
        let mut x = self.conv_pre.forward(latents)?;
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.upsample.forward(&leaky_relu(&x, SLOPE)?)?;
            x = adapters.apply(&Self::upsample_point(i), x)?;
            for (j, block) in stage.blocks.iter().enumerate() {
                x = adapters.apply(&Self::residual_point(i, j), block.forward(&x)?)?;
            }
        }
        let bands = self.conv_post.forward(&leaky_relu(&x, SLOPE)?)?.tanh()?;
        match &self.pqmf {
            Some(p) => p.synthesize(&bands),
            None => Ok(bands),
        }
    }
}

impl Parameterized for Generator {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        self.conv_pre.visit_params(&join(prefix, "conv_pre"), out);
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.upsample.visit_params(&join(&p, "upsample"), out);
            for (j, b) in s.blocks.iter().enumerate() {
                b.visit_params(&join(&p, &format!("res{j}")), out);
            }
        }
        self.conv_post.visit_params(&join(prefix, "conv_post"), out);
    }
}

/// Score map plus intermediate activations, shallow to deep.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub scores: Tensor,
    pub features: Vec<Tensor>,
}

/// Views the waveform as a `ceil(T / p) x p` grid and convolves along the
/// long axis with per-column shared kernels.
#[derive(Debug, Clone)]
pub struct PeriodDiscriminator {
    pub period: usize,
    pub convs: Vec<Conv1d>,
    pub post: Conv1d,
}

impl PeriodDiscriminator {
    fn new(init: &mut Init, period: usize, channels: &[usize]) -> Result<Self> {
        let mut convs = Vec::new();
        let mut ch = 1;
        for (i, &out) in channels.iter().enumerate() {
            let stride = if i + 1 < channels.len() { 3 } else { 1 };
            let cfg = ConvCfg {
                stride,
                padding: 2,
                dilation: 1,
                groups: 1,
            };
            convs.push(Conv1d::new(init, ch, out, 5, cfg)?);
            ch = out;
        }
        Ok(Self {
            period,
            convs,
            post: Conv1d::new(init, ch, 1, 3, ConvCfg::same(3, 1))?,
        })
    }

    /// `(B, 1, T) -> (B * p, 1, ceil(T / p))` with right zero padding.
    pub fn fold(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, t) = x.dims3()?;
        let p = self.period;
        let rows = t.div_ceil(p);
        let x = x.pad_with_zeros(2, 0, rows * p - t)?;
        Ok(x.reshape((b, rows, p))?.transpose(1, 2)?.reshape((b * p, 1, rows))?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mut h = self.fold(x)?;
        let mut features = Vec::new();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, 0.1)?;
            features.push(h.clone());
        }
        let scores = self.post.forward(&h)?;
        features.push(scores.clone());
        Ok(DiscOutput { scores, features })
    }
}

impl Parameterized for PeriodDiscriminator {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{i}")), out);
        }
        self.post.visit_params(&join(prefix, "post"), out);
    }
}

/// 2-D convolution with separate (time, frequency) kernel extents.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
}

impl Conv2d {
    pub(crate) fn new(init: &mut Init, in_ch: usize, out_ch: usize, kernel: (usize, usize), stride: usize) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel.0 * kernel.1) as f64).sqrt();
        Ok(Self {
            weight: init.uniform(&[out_ch, in_ch, kernel.0, kernel.1], bound)?,
            bias: init.uniform(&[out_ch], bound)?,
            stride,
        })
    }

    /// "Same" padding per axis, then a strided convolution.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, kh, kw) = self.weight.dims4()?;
        let x = x.pad_with_zeros(2, kh / 2, kh / 2)?.pad_with_zeros(3, kw / 2, kw / 2)?;
        let y = crate::nn::unfold::conv2d(&x, self.weight.as_tensor(), self.stride)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Convolutional classifier over one linear-magnitude spectrogram.
#[derive(Debug, Clone)]
pub struct ResolutionDiscriminator {
    pub stft: Stft,
    pub convs: Vec<Conv2d>,
    pub post: Conv2d,
}

impl ResolutionDiscriminator {
    fn new(init: &mut Init, res: Resolution, channels: usize) -> Result<Self> {
        let [n_fft, hop, win] = res;
        let c = channels;
        let convs = vec![
            Conv2d::new(init, 1, c, (3, 9), 1)?,
            Conv2d::new(init, c, c, (3, 9), 2)?,
            Conv2d::new(init, c, c, (3, 9), 2)?,
            Conv2d::new(init, c, c, (3, 9), 2)?,
            Conv2d::new(init, c, c, (3, 3), 1)?,
        ];
        Ok(Self {
            stft: Stft::new(n_fft, hop, win, init.dtype, &init.device)?,
            convs,
            post: Conv2d::new(init, c, 1, (3, 3), 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mag = self.stft.magnitude(&x.squeeze(1)?, 1e-7)?;
        let mut h = mag.unsqueeze(1)?;
        let mut features = Vec::new();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, 0.1)?;
            features.push(h.clone());
        }
        let scores = self.post.forward(&h)?;
        features.push(scores.clone());
        Ok(DiscOutput { scores, features })
    }
}

impl Parameterized for ResolutionDiscriminator {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{i}")), out);
        }
        self.post.visit_params(&join(prefix, "post"), out);
    }
}

/// All period discriminators followed by all resolution discriminators.
#[derive(Debug, Clone)]
pub struct DiscriminatorSet {
    pub periods: Vec<PeriodDiscriminator>,
    pub resolutions: Vec<ResolutionDiscriminator>,
    pub min_samples: usize,
}

impl DiscriminatorSet {
    pub fn new(init: &mut Init, cfg: &DiscriminatorConfig) -> Result<Self> {
        Ok(Self {
            periods: cfg
                .mpd_periods
                .iter()
                .map(|&p| PeriodDiscriminator::new(init, p, &cfg.mpd_channels))
                .collect::<Result<_>>()?,
            resolutions: cfg
                .mrd_resolutions
                .iter()
                .map(|&r| ResolutionDiscriminator::new(init, r, cfg.mrd_channels))
                .collect::<Result<_>>()?,
            min_samples: cfg.max_window(),
        })
    }

    pub fn len(&self) -> usize {
        self.periods.len() + self.resolutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One output per discriminator for a `(B, 1, T)` waveform batch.
    pub fn discriminate(&self, x: &Tensor) -> Result<Vec<DiscOutput>> {
        let t = x.dim(2)?;
        if t < self.min_samples {
            return Err(Error::InvalidInput(format!(
                "waveform has {t} samples; the discriminators need at least {}",
                self.min_samples
            )));
        }
        let mut out = Vec::with_capacity(self.len());
        for d in &self.periods {
            out.push(d.forward(x)?);
        }
        for d in &self.resolutions {
            out.push(d.forward(x)?);
        }
        Ok(out)
    }
}

impl Parameterized for DiscriminatorSet {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        for d in &self.periods {
            d.visit_params(&join(prefix, &format!("mpd{}", d.period)), out);
        }
        for (i, d) in self.resolutions.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("mrd{i}")), out);
        }
    }
}

/// Convenience: a `(1, 1, T)` tensor from samples.
pub fn waveform_tensor(samples: &[f32], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(samples, (1, 1, samples.len()), &Device::Cpu)?.to_dtype(dtype)?)
}
