//! Hierarchical run configuration.
//!
//! Every constant the training and adaptation protocol depends on is a named
//! field with a default; `configs/default.toml` spells all of them out and is
//! parsed by [`Config::default_file`]. Validation collects every violation
//! before failing so a broken config is reported in one pass.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The checked-in default configuration.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../configs/default.toml");

/// Reduced configuration for single-CPU smoke runs (same model, small batches).
pub const DESK_CONFIG_TOML: &str = include_str!("../configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub hop_length: usize,
    pub win_length: usize,
    pub n_fft: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            hop_length: 256,
            win_length: 1024,
            n_fft: 1024,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl AudioConfig {
    fn check(&self, errs: &mut Vec<String>) {
        if self.sample_rate == 0 {
            errs.push("audio.sample_rate must be > 0".into());
        }
        if self.hop_length == 0 || self.win_length == 0 || self.win_length % self.hop_length.max(1) != 0 {
            errs.push(format!(
                "audio.hop_length ({}) must divide audio.win_length ({})",
                self.hop_length, self.win_length
            ));
        }
        if self.win_length > self.n_fft {
            errs.push(format!(
                "audio.win_length ({}) must not exceed audio.n_fft ({})",
                self.win_length, self.n_fft
            ));
        }
        if self.mel_bins == 0 {
            errs.push("audio.mel_bins must be > 0".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            errs.push(format!(
                "audio.fmin ({}) < audio.fmax ({}) <= sample_rate/2 ({}) violated",
                self.fmin,
                self.fmax,
                self.sample_rate as f64 / 2.0
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_kernel_sizes: Vec<usize>,
    pub decoder_kernel_sizes: Vec<usize>,
    pub duration_kernel_sizes: Vec<usize>,
    pub pitch_kernel_sizes: Vec<usize>,
    pub pitch_bins: usize,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            hidden_dim: 256,
            encoder_kernel_sizes: vec![5, 25, 13, 9, 13, 9],
            decoder_kernel_sizes: vec![17, 21, 9, 13, 9, 5],
            duration_kernel_sizes: vec![3, 3, 3],
            pitch_kernel_sizes: vec![3, 3, 3],
            pitch_bins: 256,
        }
    }
}

impl AcousticConfig {
    /// Number of convolutional layers across encoder, decoder and the two predictors.
    pub fn conv_layer_count(&self) -> usize {
        self.encoder_kernel_sizes.len()
            + self.decoder_kernel_sizes.len()
            + self.duration_kernel_sizes.len()
            + self.pitch_kernel_sizes.len()
    }

    fn check(&self, errs: &mut Vec<String>) {
        if self.embed_dim != self.hidden_dim {
            errs.push(format!(
                "acoustic.embed_dim ({}) must equal acoustic.hidden_dim ({})",
                self.embed_dim, self.hidden_dim
            ));
        }
        if self.hidden_dim == 0 {
            errs.push("acoustic.hidden_dim must be > 0".into());
        }
        if self.pitch_bins != 256 {
            errs.push(format!("acoustic.pitch_bins must be 256, got {}", self.pitch_bins));
        }
        for (name, ks) in [
            ("encoder_kernel_sizes", &self.encoder_kernel_sizes),
            ("decoder_kernel_sizes", &self.decoder_kernel_sizes),
            ("duration_kernel_sizes", &self.duration_kernel_sizes),
            ("pitch_kernel_sizes", &self.pitch_kernel_sizes),
        ] {
            if ks.is_empty() {
                errs.push(format!("acoustic.{name} must not be empty"));
            }
            if ks.iter().any(|k| k % 2 == 0) {
                errs.push(format!("acoustic.{name} must contain odd kernel sizes, got {ks:?}"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderConfig {
    pub upsample_factors: Vec<usize>,
    /// Channels produced by the input convolution.
    pub pre_channels: usize,
    /// Channels of each upsampling stage (after its transposed convolution).
    pub stage_channels: Vec<usize>,
    pub residual_blocks_per_stage: usize,
    pub residual_dilations: Vec<usize>,
    pub sub_bands: usize,
    pub pqmf_taps: usize,
    pub pqmf_cutoff: f64,
    pub pqmf_beta: f64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            upsample_factors: vec![4, 4, 4],
            pre_channels: 256,
            stage_channels: vec![32, 16, 16],
            residual_blocks_per_stage: 4,
            residual_dilations: vec![1, 3, 9, 27],
            sub_bands: 4,
            pqmf_taps: 62,
            pqmf_cutoff: 0.142,
            pqmf_beta: 9.0,
        }
    }
}

impl VocoderConfig {
    pub fn upsample_product(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    fn check(&self, hop_length: usize, errs: &mut Vec<String>) {
        if self.upsample_factors.len() != 3 {
            errs.push(format!(
                "vocoder.upsample_factors must have 3 stages, got {}",
                self.upsample_factors.len()
            ));
        }
        if self.upsample_factors.iter().any(|&f| f < 2 || f % 2 != 0) {
            errs.push(format!(
                "vocoder.upsample_factors must be even and >= 2, got {:?}",
                self.upsample_factors
            ));
        }
        if self.stage_channels.len() != self.upsample_factors.len() {
            errs.push(format!(
                "vocoder.stage_channels ({}) must match the number of upsampling stages ({})",
                self.stage_channels.len(),
                self.upsample_factors.len()
            ));
        }
        if self.sub_bands == 0 || self.upsample_product() * self.sub_bands != hop_length {
            errs.push(format!(
                "product(vocoder.upsample_factors) ({}) x vocoder.sub_bands ({}) must equal audio.hop_length ({})",
                self.upsample_product(),
                self.sub_bands,
                hop_length
            ));
        }
        if self.residual_dilations.len() != self.residual_blocks_per_stage {
            errs.push(format!(
                "vocoder.residual_dilations ({}) must list one dilation per residual block ({})",
                self.residual_dilations.len(),
                self.residual_blocks_per_stage
            ));
        }
        if self.sub_bands > 1 && self.pqmf_taps % 2 != 0 {
            errs.push(format!("vocoder.pqmf_taps must be even, got {}", self.pqmf_taps));
        }
    }
}

/// One STFT analysis setting: `(n_fft, hop, win)`.
pub type Resolution = [usize; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub mpd_periods: Vec<usize>,
    pub mpd_channels: Vec<usize>,
    pub mrd_resolutions: Vec<Resolution>,
    pub mrd_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            mpd_periods: vec![2, 3, 5, 7, 11],
            mpd_channels: vec![16, 32, 64, 64],
            mrd_resolutions: vec![[1024, 120, 600], [2048, 240, 1200], [512, 50, 240]],
            mrd_channels: 8,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_resolutions(name: &str, res: &[Resolution], errs: &mut Vec<String>) {
    for &[n_fft, hop, win] in res {
        if hop == 0 || win == 0 || win > n_fft {
            errs.push(format!("{name}: invalid resolution ({n_fft}, {hop}, {win})"));
        }
    }
}

impl DiscriminatorConfig {
    /// Longest analysis window any discriminator needs.
    pub fn max_window(&self) -> usize {
        self.mrd_resolutions.iter().map(|r| r[0]).max().unwrap_or(0)
    }

    fn check(&self, errs: &mut Vec<String>) {
        for (i, &a) in self.mpd_periods.iter().enumerate() {
            if a < 2 {
                errs.push(format!("discriminator.mpd_periods must be >= 2, got {a}"));
            }
            for &b in &self.mpd_periods[i + 1..] {
                if gcd(a, b) != 1 {
                    errs.push(format!("discriminator.mpd_periods {a} and {b} are not coprime"));
                }
            }
        }
        if self.mpd_channels.is_empty() {
            errs.push("discriminator.mpd_channels must not be empty".into());
        }
        if self.mrd_resolutions.len() < 2 {
            errs.push(format!(
                "discriminator.mrd_resolutions needs at least 2 entries, got {}",
                self.mrd_resolutions.len()
            ));
        }
        check_resolutions("discriminator.mrd_resolutions", &self.mrd_resolutions, errs);
        if self.mrd_channels == 0 {
            errs.push("discriminator.mrd_channels must be > 0".into());
        }
    }
}

/// Weights of the auxiliary generator losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub fm: f64,
    pub mel: f64,
    pub stft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fm: 2.0,
            mel: 45.0,
            stft: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_fm: f64,
    pub lambda_mel: f64,
    pub lambda_stft: f64,
    pub stft_resolutions: Vec<Resolution>,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_fm: w.fm,
            lambda_mel: w.mel,
            lambda_stft: w.stft,
            stft_resolutions: vec![[1024, 120, 600], [2048, 240, 1200], [512, 50, 240]],
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            fm: self.lambda_fm,
            mel: self.lambda_mel,
            stft: self.lambda_stft,
        }
    }

    fn check(&self, errs: &mut Vec<String>) {
        for (name, v) in [
            ("lambda_fm", self.lambda_fm),
            ("lambda_mel", self.lambda_mel),
            ("lambda_stft", self.lambda_stft),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("losses.{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.stft_resolutions.is_empty() {
            errs.push("losses.stft_resolutions must not be empty".into());
        }
        check_resolutions("losses.stft_resolutions", &self.stft_resolutions, errs);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub bottleneck_dim: usize,
    pub conv_kernel_sizes: Vec<usize>,
    pub layer_norm: bool,
    pub se_reduction: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            bottleneck_dim: 16,
            conv_kernel_sizes: vec![3, 5, 3],
            layer_norm: true,
            se_reduction: 4,
        }
    }
}

impl AdapterConfig {
    fn check(&self, errs: &mut Vec<String>) {
        if self.bottleneck_dim == 0 {
            errs.push("adapters.bottleneck_dim must be >= 1".into());
        }
        if self.conv_kernel_sizes.len() != 3 || self.conv_kernel_sizes.iter().any(|k| k % 2 == 0) {
            errs.push(format!(
                "adapters.conv_kernel_sizes must be three odd sizes, got {:?}",
                self.conv_kernel_sizes
            ));
        }
        if self.se_reduction == 0 {
            errs.push("adapters.se_reduction must be >= 1".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Per-epoch exponential learning-rate decay.
    pub gamma: f64,
    pub backbone_lr: f64,
    pub finetune_full_lr: f64,
    pub finetune_adapters_lr: f64,
    /// Learning rate of the discriminators during fine-tuning.
    pub finetune_discriminator_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1e-2,
            gamma: 0.99,
            backbone_lr: 2e-4,
            finetune_full_lr: 1e-5,
            finetune_adapters_lr: 1e-4,
            finetune_discriminator_lr: 1e-4,
        }
    }
}

impl OptimizerConfig {
    fn check(&self, errs: &mut Vec<String>) {
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            errs.push(format!(
                "optimizer: 0 < beta1 ({}) < beta2 ({}) < 1 violated",
                self.beta1, self.beta2
            ));
        }
        for (name, v) in [
            ("backbone_lr", self.backbone_lr),
            ("finetune_full_lr", self.finetune_full_lr),
            ("finetune_adapters_lr", self.finetune_adapters_lr),
            ("finetune_discriminator_lr", self.finetune_discriminator_lr),
            ("eps", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("optimizer.{name} must be > 0, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("optimizer.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push(format!("optimizer.gamma must be in (0, 1], got {}", self.gamma));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Training manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    pub steps: u64,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accumulation: usize,
    pub finetune_epochs: u32,
    /// Latent frames per vocoder training segment.
    pub segment_frames: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            steps: 1_000_000,
            batch_size: 128,
            grad_accumulation: 1,
            finetune_epochs: 200,
            segment_frames: 32,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainingConfig {
    fn check(&self, errs: &mut Vec<String>) {
        if self.batch_size == 0 {
            errs.push("training.batch_size must be > 0".into());
        }
        if self.grad_accumulation == 0 {
            errs.push("training.grad_accumulation must be > 0".into());
        }
        if self.segment_frames == 0 {
            errs.push("training.segment_frames must be > 0".into());
        }
    }
}

/// Complete configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub audio: AudioConfig,
    pub acoustic: AcousticConfig,
    pub vocoder: VocoderConfig,
    pub discriminator: DiscriminatorConfig,
    pub losses: LossConfig,
    pub adapters: AdapterConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1234,
            audio: AudioConfig::default(),
            acoustic: AcousticConfig::default(),
            vocoder: VocoderConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            losses: LossConfig::default(),
            adapters: AdapterConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl Config {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. A relative `training.manifest` is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(m), Some(dir)) = (cfg.training.manifest.as_mut(), path.parent()) {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn default_file() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG_TOML).expect("checked-in default config is valid")
    }

    pub fn desk() -> Self {
        Self::from_toml_str(DESK_CONFIG_TOML).expect("checked-in desk config is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.audio.check(&mut errs);
        self.acoustic.check(&mut errs);
        self.vocoder.check(self.audio.hop_length, &mut errs);
        self.discriminator.check(&mut errs);
        self.losses.check(&mut errs);
        self.adapters.check(&mut errs);
        self.optimizer.check(&mut errs);
        self.training.check(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Minimum waveform length accepted by the discriminators and the STFT loss.
    pub fn min_segment_samples(&self) -> usize {
        let loss_max = self.losses.stft_resolutions.iter().map(|r| r[0]).max().unwrap_or(0);
        self.discriminator.max_window().max(loss_max)
    }
}

/// What a training run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Backbone,
    FinetuneLanguage,
    FinetuneSpeaker,
}

/// Which parameters fine-tuning updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Adapters,
}

/// Adapter placement variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanVariant {
    /// Bottleneck adapters after every acoustic conv layer, 15 conv adapters in the vocoder.
    PaperDefault,
    /// Only the 3 vocoder adapters that follow the transposed convolutions.
    VocoderReduced,
    /// Bottleneck adapters at every attachment point, vocoder included.
    FullModel,
}

/// Which half of the generator receives adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Acoustic,
    Vocoder,
    Both,
}

macro_rules! snake_enum {
    ($ty:ty { $($var:ident => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$var => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$var),)+
                    other => Err(Error::InvalidInput(format!(
                        "unknown {} `{}` (expected one of: {})",
                        stringify!($ty), other, [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

snake_enum!(Task { Backbone => "backbone", FinetuneLanguage => "language", FinetuneSpeaker => "speaker" });
snake_enum!(Mode { Full => "full", Adapters => "adapters" });
snake_enum!(PlanVariant { PaperDefault => "paper_default", VocoderReduced => "vocoder_reduced", FullModel => "full_model" });
snake_enum!(ModelKind { Acoustic => "acoustic", Vocoder => "vocoder", Both => "both" });

/// Resolved settings of one training or fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub mode: Mode,
    /// Optimizer steps (backbone runs).
    pub steps: u64,
    /// Epochs (fine-tuning runs).
    pub epochs: u32,
    pub batch_size: usize,
    pub plan: PlanVariant,
    pub adapt: ModelKind,
    pub seed: u64,
}

impl RunConfig {
    pub fn backbone(cfg: &Config) -> Self {
        Self {
            task: Task::Backbone,
            mode: Mode::Full,
            steps: cfg.training.steps,
            epochs: 0,
            batch_size: cfg.training.batch_size,
            plan: PlanVariant::PaperDefault,
            adapt: ModelKind::Both,
            seed: cfg.seed,
        }
    }

    pub fn finetune(cfg: &Config, task: Task, mode: Mode, plan: PlanVariant) -> Self {
        Self {
            task,
            mode,
            steps: 0,
            epochs: cfg.training.finetune_epochs,
            batch_size: cfg.training.batch_size,
            plan,
            adapt: ModelKind::Both,
            seed: cfg.seed,
        }
    }

    /// Initial generator learning rate for this run.
    pub fn initial_lr(&self, opt: &OptimizerConfig) -> f64 {
        match (self.task, self.mode) {
            (Task::Backbone, _) => opt.backbone_lr,
            (_, Mode::Full) => opt.finetune_full_lr,
            (_, Mode::Adapters) => opt.finetune_adapters_lr,
        }
    }

    /// Initial discriminator learning rate for this run.
    pub fn discriminator_lr(&self, opt: &OptimizerConfig) -> f64 {
        match self.task {
            Task::Backbone => opt.backbone_lr,
            _ => opt.finetune_discriminator_lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_file_matches_builtin_defaults() {
        assert_eq!(Config::default_file(), Config::default());
    }

    #[test]
    fn optimizer_defaults() {
        let o = OptimizerConfig::default();
        assert_eq!((o.beta1, o.beta2, o.weight_decay, o.gamma), (0.8, 0.99, 1e-2, 0.99));
        assert_eq!(o.backbone_lr, 2e-4);
        assert_eq!(o.finetune_full_lr, 1e-5);
        assert_eq!(o.finetune_adapters_lr, 1e-4);
        let t = TrainingConfig::default();
        assert_eq!((t.steps, t.batch_size, t.finetune_epochs), (1_000_000, 128, 200));
    }

    #[test]
    fn run_config_lr_by_mode() {
        let cfg = Config::default();
        let o = &cfg.optimizer;
        let full = RunConfig::finetune(&cfg, Task::FinetuneLanguage, Mode::Full, PlanVariant::PaperDefault);
        let ad = RunConfig::finetune(&cfg, Task::FinetuneSpeaker, Mode::Adapters, PlanVariant::PaperDefault);
        assert_eq!(full.initial_lr(o), 1e-5);
        assert_eq!(ad.initial_lr(o), 1e-4);
        assert_eq!(full.epochs, 200);
        assert_eq!(RunConfig::backbone(&cfg).initial_lr(o), 2e-4);
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut cfg = Config::default();
        cfg.audio.fmax = 1e6;
        cfg.optimizer.beta1 = 0.995;
        cfg.vocoder.sub_bands = 3;
        cfg.discriminator.mpd_periods = vec![2, 4];
        match cfg.validate() {
            Err(Error::Config(errs)) => {
                assert_eq!(errs.len(), 4, "{errs:#?}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::from_toml_str("[audio]\nsample_rat = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn enums_parse() {
        assert_eq!("vocoder_reduced".parse::<PlanVariant>().unwrap(), PlanVariant::VocoderReduced);
        assert_eq!("language".parse::<Task>().unwrap(), Task::FinetuneLanguage);
        assert!("bogus".parse::<Mode>().is_err());
    }
}
