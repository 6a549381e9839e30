//! Adversarial training of the backbone and adapter / full fine-tuning.

pub mod checkpoint;
pub mod metrics;
pub mod optim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustic::Targets;
use crate::adapters::{build_placement_plan, count_parameters, FreezeSpec, ParamCounts};
use crate::config::{Config, LossWeights, Mode, RunConfig, Task};
use crate::dataio::{Dataset, Vocab};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_adversarial_loss, duration_loss, duration_targets, feature_matching_loss, features,
    generator_adversarial_loss, mel_loss, pitch_loss, scores, total_loss_tensor, LossParts, LossReport, StftLoss,
};
use crate::model::{NewIds, TtsModel};
use crate::nn::spectral::MelSpectrogram;
use crate::nn::{scalar, Init, NamedParams, Parameterized};
use crate::vocoder::DiscriminatorSet;

pub use checkpoint::{Checkpoint, TrainState};
pub use metrics::MetricsLog;
pub use optim::{lr_at_epoch, AdamW, AdamWState};

/// Parameters updated row by row: only rows used in a batch move.
pub const LOOKUP_TABLES: [&str; 3] = [
    "acoustic.phoneme_embedding",
    "acoustic.speaker_table",
    "acoustic.language_table",
];

const SEGMENT_SALT: u64 = 0x5E6D_E47A_11CE_0001;
const DISCRIMINATOR_SEED_SALT: u64 = 0xD15C_0000_0000_0001;

fn is_table(name: &str) -> bool {
    LOOKUP_TABLES.contains(&name)
}

/// Generator-side tensors of one micro-batch.
struct Forward {
    duration: Tensor,
    pitch: Tensor,
    /// `(B, 1, T)` reference segments.
    x: Tensor,
    /// `(B, 1, T)` generated segments.
    x_hat: Tensor,
}

/// Mean total loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_discriminator: f64,
}

pub struct Trainer {
    pub model: TtsModel,
    pub discriminators: DiscriminatorSet,
    pub run: RunConfig,
    /// Optimizer steps taken.
    pub step: u64,
    pub freeze: FreezeSpec,
    g_opt: AdamW,
    d_opt: AdamW,
    g_lr0: f64,
    d_lr0: f64,
    mel: MelSpectrogram,
    stft: StftLoss,
    weights: LossWeights,
}

fn freeze_for(run: &RunConfig) -> FreezeSpec {
    match (run.task, run.mode) {
        (Task::Backbone, _) | (_, Mode::Full) => FreezeSpec::full(),
        (_, Mode::Adapters) => FreezeSpec::adapters(),
    }
}

impl Trainer {
    fn assemble(model: TtsModel, discriminators: DiscriminatorSet, run: RunConfig) -> Result<Self> {
        let cfg = model.cfg.clone();
        cfg.validate()?;
        if run.batch_size == 0 {
            return Err(Error::Config(vec!["batch size must be > 0".into()]));
        }
        let freeze = freeze_for(&run);
        let trainable = freeze.partition(&model.named_params(""))?.0;
        let g_lr0 = run.initial_lr(&cfg.optimizer);
        let d_lr0 = run.discriminator_lr(&cfg.optimizer);
        let g_opt = AdamW::new(trainable, &cfg.optimizer, g_lr0, is_table);
        let d_opt = AdamW::new(discriminators.named_params(""), &cfg.optimizer, d_lr0, |_| false);
        let min = cfg.min_segment_samples();
        let segment = cfg.training.segment_frames * cfg.audio.hop_length;
        if segment < min {
            return Err(Error::Config(vec![format!(
                "training.segment_frames x audio.hop_length = {segment} samples, below the {min} the discriminators and STFT loss need"
            )]));
        }
        Ok(Self {
            mel: MelSpectrogram::new(&cfg.audio, DType::F32, &Device::Cpu)?,
            stft: StftLoss::new(&cfg.losses.stft_resolutions, DType::F32)?,
            weights: cfg.losses.weights(),
            model,
            discriminators,
            run,
            step: 0,
            freeze,
            g_opt,
            d_opt,
            g_lr0,
            d_lr0,
        })
    }

    /// A freshly initialized backbone.
    pub fn backbone(cfg: &Config, vocab: &Vocab, run: RunConfig) -> Result<Self> {
        if run.task != Task::Backbone {
            return Err(Error::InvalidInput(format!("backbone training got task `{}`", run.task)));
        }
        let model = TtsModel::new(cfg, vocab, run.seed)?;
        let d = DiscriminatorSet::new(&mut Init::new(run.seed ^ DISCRIMINATOR_SEED_SALT, DType::F32), &cfg.discriminator)?;
        Self::assemble(model, d, run)
    }

    /// Continues the run stored in `ckpt`, optimizer state included.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::assemble(ckpt.model()?, ckpt.discriminators()?, ckpt.state.run.clone())?;
        if let Some(s) = ckpt.generator_optimizer()? {
            t.g_opt.load_state(&s)?;
        }
        if let Some(s) = ckpt.discriminator_optimizer()? {
            t.d_opt.load_state(&s)?;
        }
        t.step = ckpt.state.step;
        Ok(t)
    }

    /// Starts fine-tuning a trained backbone on data whose symbols are in
    /// `data_vocab`. In adapter mode the backbone tables are recorded, the
    /// plan is injected and everything else is frozen.
    pub fn finetune(ckpt: &Checkpoint, data_vocab: &Vocab, run: RunConfig) -> Result<Self> {
        if run.task == Task::Backbone {
            return Err(Error::InvalidInput("fine-tuning needs task `language` or `speaker`".into()));
        }
        if !ckpt.plan.is_empty() {
            return Err(Error::Checkpoint(
                "checkpoint already carries adapters; fine-tune from a backbone checkpoint".into(),
            ));
        }
        let mut model = ckpt.model()?;
        let require = match run.task {
            Task::FinetuneLanguage => NewIds::Languages,
            Task::FinetuneSpeaker => NewIds::Speakers,
            Task::Backbone => NewIds::Any,
        };
        if run.mode == Mode::Adapters {
            model.snapshot_tables()?;
        }
        model.extend_vocab(data_vocab, require)?;
        if run.mode == Mode::Adapters {
            let plan = build_placement_plan(run.adapt, run.plan, &model.attachment_points(), &model.cfg.adapters)?;
            model.inject(&plan, run.seed)?;
        }
        Self::assemble(model, ckpt.discriminators()?, run)
    }

    pub fn config(&self) -> &Config {
        &self.model.cfg
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.g_opt.names()
    }

    pub fn param_counts(&self) -> Result<ParamCounts> {
        count_parameters(&self.model.named_params(""), &self.freeze)
    }

    fn accumulation(&self) -> u64 {
        self.config().training.grad_accumulation.max(1) as u64
    }

    /// Epoch index of an optimizer step.
    pub fn epoch_of(&self, step: u64, data: &Dataset) -> u64 {
        step * self.accumulation() / data.steps_per_epoch(self.run.batch_size)
    }

    /// Optimizer steps covering `epochs` passes over `data`.
    pub fn steps_for_epochs(&self, epochs: u64, data: &Dataset) -> u64 {
        (epochs * data.steps_per_epoch(self.run.batch_size)).div_ceil(self.accumulation())
    }

    pub fn learning_rates(&self) -> (f64, f64) {
        (self.g_opt.lr, self.d_opt.lr)
    }

    fn forward(&self, data: &Dataset, batch: &[usize], micro_step: u64) -> Result<Forward> {
        let cfg = self.config();
        let seg = cfg.training.segment_frames;
        let hop = cfg.audio.hop_length;
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed ^ SEGMENT_SALT ^ micro_step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (mut dur, mut pitch, mut latents) = (Vec::new(), Vec::new(), Vec::new());
        let mut wav = Vec::with_capacity(batch.len() * seg * hop);
        for &i in batch {
            let u = &data.utterances[i];
            let out = self.model.acoustic_forward(
                &u.phoneme_ids,
                u.speaker_id,
                u.language_id,
                Targets {
                    durations: Some(&u.durations),
                    pitch_bins: Some(&u.pitch_bins),
                },
            )?;
            dur.push(duration_loss(&out.log_durations, &duration_targets(&u.durations, DType::F32)?)?);
            pitch.push(pitch_loss(&out.pitch_logits, &u.pitch_bins)?);
            let frames = out.latents.dim(2)?;
            let start = if frames > seg { rng.gen_range(0..=frames - seg) } else { 0 };
            let n = seg.min(frames);
            let mut lat = out.latents.narrow(2, start, n)?;
            if n < seg {
                lat = lat.pad_with_zeros(2, 0, seg - n)?;
            }
            latents.push(lat);
            let lo = (start * hop).min(u.waveform.len());
            let hi = ((start + n) * hop).min(u.waveform.len());
            wav.extend_from_slice(&u.waveform[lo..hi]);
            wav.resize(wav.len() + seg * hop - (hi - lo), 0.0);
        }
        let b = batch.len();
        let latents = Tensor::cat(&latents, 0)?;
        let x = Tensor::from_vec(wav, (b, 1, seg * hop), &Device::Cpu)?;
        let x_hat = self.model.vocode(&latents)?;
        Ok(Forward {
            duration: Tensor::stack(&dur, 0)?.mean_all()?,
            pitch: Tensor::stack(&pitch, 0)?.mean_all()?,
            x,
            x_hat,
        })
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, data: &Dataset) -> Result<LossReport> {
        let fwd = self.prepare(data)?;
        let d_loss = self.discriminator_update(&fwd)?;
        let parts = self.generator_update(&fwd)?;
        self.step += 1;
        LossReport::new(parts, &self.weights, d_loss)
    }

    /// Sets the epoch's learning rates and runs the generator on every
    /// micro-batch of the current step.
    fn prepare(&mut self, data: &Dataset) -> Result<Vec<Forward>> {
        if data.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let k = self.accumulation();
        let epoch = self.epoch_of(self.step, data);
        let gamma = self.config().optimizer.gamma;
        self.g_opt.lr = lr_at_epoch(self.g_lr0, gamma, epoch);
        self.d_opt.lr = lr_at_epoch(self.d_lr0, gamma, epoch);
        (0..k)
            .map(|j| {
                let micro = self.step * k + j;
                let batch = data.batch_at(self.run.seed, micro, self.run.batch_size);
                self.forward(data, &batch, micro)
            })
            .collect()
    }

    /// Updates the discriminators on real segments and detached generator
    /// output; returns the mean discriminator loss.
    fn discriminator_update(&mut self, fwd: &[Forward]) -> Result<f64> {
        let mut grads = Vec::with_capacity(fwd.len());
        let mut total = 0.0;
        for f in fwd {
            let real = self.discriminators.discriminate(&f.x)?;
            let fake = self.discriminators.discriminate(&f.x_hat.detach())?;
            let loss = discriminator_adversarial_loss(&scores(&real), &scores(&fake))?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: "discriminator".into(),
                    step: Some(self.step),
                    value,
                });
            }
            total += value;
            grads.push(self.d_opt.gradients(&loss.backward()?));
        }
        self.d_opt.step(&optim::average_gradients(grads)?)?;
        Ok(total / fwd.len() as f64)
    }

    /// Updates the trainable generator parameters with the weighted total
    /// loss; returns the mean of every term.
    fn generator_update(&mut self, fwd: &[Forward]) -> Result<LossParts> {
        let mut grads = Vec::with_capacity(fwd.len());
        let mut sum = LossParts::default();
        for f in fwd {
            let real = self.discriminators.discriminate(&f.x)?;
            let fake = self.discriminators.discriminate(&f.x_hat)?;
            let adv = generator_adversarial_loss(&scores(&fake))?;
            let fm = feature_matching_loss(&features(&real, true), &features(&fake, false))?;
            let x = f.x.squeeze(1)?;
            let x_hat = f.x_hat.squeeze(1)?;
            let mel = mel_loss(&x, &x_hat, &self.mel)?;
            let stft = self.stft.forward(&x, &x_hat)?;
            let parts = LossParts {
                duration: scalar(&f.duration)?,
                pitch: scalar(&f.pitch)?,
                adversarial: scalar(&adv)?,
                feature_matching: scalar(&fm)?,
                mel: scalar(&mel)?,
                stft: scalar(&stft)?,
            };
            crate::losses::check_finite(&parts, Some(self.step))?;
            let total = total_loss_tensor(&f.duration, &f.pitch, &adv, &fm, &mel, &stft, &self.weights)?;
            grads.push(self.g_opt.gradients(&total.backward()?));
            sum.duration += parts.duration;
            sum.pitch += parts.pitch;
            sum.adversarial += parts.adversarial;
            sum.feature_matching += parts.feature_matching;
            sum.mel += parts.mel;
            sum.stft += parts.stft;
        }
        self.g_opt.step(&optim::average_gradients(grads)?)?;
        let n = fwd.len() as f64;
        Ok(LossParts {
            duration: sum.duration / n,
            pitch: sum.pitch / n,
            adversarial: sum.adversarial / n,
            feature_matching: sum.feature_matching / n,
            mel: sum.mel / n,
            stft: sum.stft / n,
        })
    }

    /// Trains until `until_step`, logging every step and writing a checkpoint
    /// every `training.checkpoint_every` steps and at the end.
    pub fn run_until(
        &mut self,
        data: &Dataset,
        until_step: u64,
        log: &mut MetricsLog,
        checkpoint_dir: Option<&Path>,
    ) -> Result<Vec<LossReport>> {
        let every = self.config().training.checkpoint_every;
        let mut history = Vec::new();
        while self.step < until_step {
            let report = self.train_step(data)?;
            log.record(self.step, &report)?;
            history.push(report);
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.step % every == 0 {
                    self.checkpoint(data)?.save(&checkpoint_path(dir, self.step))?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            self.checkpoint(data)?.save(&dir.join(LAST_CHECKPOINT))?;
        }
        log.flush()?;
        Ok(history)
    }

    pub fn checkpoint(&self, data: &Dataset) -> Result<Checkpoint> {
        let state = TrainState {
            run: self.run.clone(),
            step: self.step,
            epoch: self.epoch_of(self.step, data),
            generator_optimizer: None,
            discriminator_optimizer: None,
        };
        Checkpoint::capture(
            &self.model,
            Some(&self.discriminators),
            state,
            Some((&self.g_opt.state(), &self.d_opt.state())),
        )
    }
}

/// File name of the checkpoint written when a run ends.
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:07}.ckpt"))
}

/// Groups per-step reports by epoch.
pub fn epoch_summaries(history: &[LossReport], first_step: u64, epoch_of: impl Fn(u64) -> u64) -> Vec<EpochSummary> {
    let mut out: Vec<EpochSummary> = Vec::new();
    for (i, r) in history.iter().enumerate() {
        let e = epoch_of(first_step + i as u64);
        match out.last_mut() {
            Some(s) if s.epoch == e => {
                s.mean_total += r.total;
                s.mean_discriminator += r.discriminator;
                s.steps += 1;
            }
            _ => out.push(EpochSummary {
                epoch: e,
                steps: 1,
                mean_total: r.total,
                mean_discriminator: r.discriminator,
            }),
        }
    }
    for s in &mut out {
        s.mean_total /= s.steps as f64;
        s.mean_discriminator /= s.steps as f64;
    }
    out
}

/// FNV-1a over the bit patterns of every parameter, keyed by name.
pub fn param_checksums(params: &NamedParams) -> Result<BTreeMap<String, u64>> {
    params
        .iter()
        .map(|(name, var)| {
            let data: Vec<f32> = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for v in data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
            Ok((name.clone(), h))
        })
        .collect()
}

/// Free-running synthesis from a checkpoint.
pub fn synthesize<S: AsRef<str>>(ckpt: &Checkpoint, phonemes: &[S], speaker: &str, language: &str) -> Result<Vec<f32>> {
    ckpt.model()?.synthesize(phonemes, speaker, language)
}
