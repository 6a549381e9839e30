//! The complete generator: acoustic model, vocoder and injected adapters.

use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticModel, AcousticOutput, Targets};
use crate::adapters::{build_placement_plan, AdapterPlacementPlan, AdapterSet, AttachmentPoint, ADAPTER_PREFIX};
use crate::config::{Config, ModelKind, PlanVariant};
use crate::dataio::Vocab;
use crate::error::{Error, Result};
use crate::nn::layers::Embedding;
use crate::nn::{Init, NamedParams, Parameterized};
use crate::vocoder::Generator;

/// Seed offset for adapter initialization, so adapters never share a stream
/// with the backbone.
const ADAPTER_SEED_SALT: u64 = 0xADA9_7E55;

/// Lookup tables and vocabulary as they were before fine-tuning, restored
/// when the adapters are stripped.
#[derive(Debug, Clone)]
pub struct BaseTables {
    pub vocab: Vocab,
    pub phoneme_embedding: Tensor,
    pub speaker_table: Tensor,
    pub language_table: Tensor,
}

/// Which vocabulary axis a fine-tune must introduce new ids on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NewIds {
    Speakers,
    Languages,
    Any,
}

#[derive(Debug, Clone)]
pub struct TtsModel {
    pub cfg: Config,
    pub vocab: Vocab,
    pub acoustic: AcousticModel,
    pub vocoder: Generator,
    pub adapters: AdapterSet,
    pub base: Option<BaseTables>,
}

impl TtsModel {
    pub fn new(cfg: &Config, vocab: &Vocab, seed: u64) -> Result<Self> {
        let mut init = Init::new(seed, DType::F32);
        let acoustic = AcousticModel::new(
            &mut init,
            &cfg.acoustic,
            vocab.phonemes.len(),
            vocab.speakers.len(),
            vocab.languages.len(),
        )?;
        let vocoder = Generator::new(&mut init, &cfg.vocoder, cfg.acoustic.hidden_dim)?;
        Ok(Self {
            cfg: cfg.clone(),
            vocab: vocab.clone(),
            acoustic,
            vocoder,
            adapters: AdapterSet::default(),
            base: None,
        })
    }

    pub fn attachment_points(&self) -> Vec<AttachmentPoint> {
        let mut p = self.acoustic.attachment_points();
        p.extend(self.vocoder.attachment_points());
        p
    }

    /// Injects identity-initialized adapters.
    pub fn inject(&mut self, plan: &AdapterPlacementPlan, seed: u64) -> Result<()> {
        let points = self.attachment_points();
        let mut init = Init::new(seed ^ ADAPTER_SEED_SALT, DType::F32);
        self.adapters.inject(plan, &points, &mut init)
    }

    /// Removes all adapters and restores the pre-fine-tune tables.
    pub fn strip_adapters(&mut self) -> Result<()> {
        self.adapters.clear();
        if let Some(base) = self.base.take() {
            self.vocab = base.vocab;
            self.acoustic.phoneme_embedding.table = Var::from_tensor(&base.phoneme_embedding)?;
            self.acoustic.speaker_table.table = Var::from_tensor(&base.speaker_table)?;
            self.acoustic.language_table.table = Var::from_tensor(&base.language_table)?;
        }
        Ok(())
    }

    /// Records the current tables so that [`strip_adapters`](Self::strip_adapters)
    /// can restore them.
    pub fn snapshot_tables(&mut self) -> Result<()> {
        let copy = |e: &Embedding| -> Result<Tensor> { Ok(e.table.as_tensor().copy()?) };
        self.base = Some(BaseTables {
            vocab: self.vocab.clone(),
            phoneme_embedding: copy(&self.acoustic.phoneme_embedding)?,
            speaker_table: copy(&self.acoustic.speaker_table)?,
            language_table: copy(&self.acoustic.language_table)?,
        });
        Ok(())
    }

    /// Appends the ids of `other` missing from the model's vocabulary. New
    /// rows start at the mean of the existing rows. `require` names the axis
    /// on which every id of `other` must be new.
    pub fn extend_vocab(&mut self, other: &Vocab, require: NewIds) -> Result<()> {
        let collide = |kind: &'static str, mine: &[String], theirs: &[String]| -> Result<()> {
            if let Some(id) = theirs.iter().find(|s| mine.contains(s)) {
                return Err(Error::InvalidInput(format!(
                    "{kind} `{id}` already exists in the checkpoint; adaptation data must introduce a new {kind}"
                )));
            }
            Ok(())
        };
        match require {
            NewIds::Speakers => collide("speaker", &self.vocab.speakers, &other.speakers)?,
            NewIds::Languages => collide("language", &self.vocab.languages, &other.languages)?,
            NewIds::Any => {}
        }
        fn grow(table: &mut Embedding, mine: &mut Vec<String>, theirs: &[String]) -> Result<()> {
            let fresh: Vec<String> = theirs.iter().filter(|s| !mine.contains(s)).cloned().collect();
            if fresh.is_empty() {
                return Ok(());
            }
            let t = table.table.as_tensor();
            let mean = t.mean_keepdim(0)?;
            let rows = mean.repeat((fresh.len(), 1))?;
            table.table = Var::from_tensor(&Tensor::cat(&[t, &rows], 0)?)?;
            mine.extend(fresh);
            Ok(())
        }
        grow(&mut self.acoustic.phoneme_embedding, &mut self.vocab.phonemes, &other.phonemes)?;
        grow(&mut self.acoustic.speaker_table, &mut self.vocab.speakers, &other.speakers)?;
        grow(&mut self.acoustic.language_table, &mut self.vocab.languages, &other.languages)?;
        Ok(())
    }

    /// Acoustic pass; teacher-forced when targets are given.
    pub fn acoustic_forward(
        &self,
        phoneme_ids: &[u32],
        speaker: u32,
        language: u32,
        targets: Targets<'_>,
    ) -> Result<AcousticOutput> {
        self.acoustic.forward(phoneme_ids, speaker, language, targets, &self.adapters)
    }

    /// `(B, hidden, F)` latents to `(B, 1, F * hop)` waveforms.
    pub fn vocode(&self, latents: &Tensor) -> Result<Tensor> {
        self.vocoder.forward(latents, &self.adapters)
    }

    /// Free-running synthesis from vocabulary ids.
    pub fn synthesize_ids(&self, phoneme_ids: &[u32], speaker: u32, language: u32) -> Result<(Vec<f32>, AcousticOutput)> {
        let out = self.acoustic_forward(phoneme_ids, speaker, language, Targets::default())?;
        let wav = self.vocode(&out.latents)?;
        Ok((wav.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?, out))
    }

    /// Free-running synthesis from symbol names.
    pub fn synthesize<S: AsRef<str>>(&self, phonemes: &[S], speaker: &str, language: &str) -> Result<Vec<f32>> {
        let ids = self.vocab.phoneme_ids(phonemes)?;
        let spk = self.vocab.speaker_id(speaker)?;
        let lang = self.vocab.language_id(language)?;
        Ok(self.synthesize_ids(&ids, spk, lang)?.0)
    }

    /// Parameters outside the adapters.
    pub fn backbone_params(&self) -> NamedParams {
        let mut out = Vec::new();
        self.acoustic.visit_params("acoustic", &mut out);
        self.vocoder.visit_params("vocoder", &mut out);
        out
    }

    /// Parameter census of injecting `variant` for `kind` into this model's
    /// backbone. Adapters already present are ignored.
    pub fn parameter_budget(&self, kind: ModelKind, variant: PlanVariant) -> Result<ParameterBudget> {
        let plan = build_placement_plan(kind, variant, &self.attachment_points(), &self.cfg.adapters)?;
        let size = |p: &dyn Parameterized, prefix: &str| p.named_params(prefix).iter().map(|(_, v)| v.elem_count()).sum::<usize>();
        let acoustic = size(&self.acoustic, "acoustic");
        let vocoder = size(&self.vocoder, "vocoder");
        let backbone = acoustic + vocoder;
        let adapters = plan.param_count();
        let tables = [&self.acoustic.phoneme_embedding, &self.acoustic.speaker_table, &self.acoustic.language_table]
            .iter()
            .map(|e| e.table.elem_count())
            .sum::<usize>();
        Ok(ParameterBudget {
            plan: variant,
            adapter_count: plan.len(),
            acoustic_backbone: acoustic,
            vocoder_backbone: vocoder,
            backbone,
            acoustic_adapters: plan.param_count_under("acoustic."),
            vocoder_adapters: plan.param_count_under("vocoder."),
            adapters,
            adapter_ratio: adapters as f64 / backbone as f64,
            trainable_with_tables: adapters + tables,
        })
    }
}

/// Sizes of the backbone and of an adapter plan, in parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBudget {
    pub plan: PlanVariant,
    pub adapter_count: usize,
    pub acoustic_backbone: usize,
    pub vocoder_backbone: usize,
    pub backbone: usize,
    pub acoustic_adapters: usize,
    pub vocoder_adapters: usize,
    pub adapters: usize,
    /// `adapters / backbone`.
    pub adapter_ratio: f64,
    /// What adapter-mode fine-tuning updates: the adapters plus the
    /// phoneme, speaker and language tables.
    pub trainable_with_tables: usize,
}

impl Parameterized for TtsModel {
    fn visit_params(&self, _prefix: &str, out: &mut NamedParams) {
        self.acoustic.visit_params("acoustic", out);
        self.vocoder.visit_params("vocoder", out);
        self.adapters.visit_params(ADAPTER_PREFIX, out);
    }
}
