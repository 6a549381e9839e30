//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `ADPTCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor as
//! raw little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::optim::{AdamWState, SlotState};
use crate::adapters::AdapterPlacementPlan;
use crate::config::{Config, RunConfig};
use crate::dataio::Vocab;
use crate::error::{Error, Result};
use crate::model::{BaseTables, TtsModel};
use crate::nn::{Init, NamedParams, Parameterized};
use crate::vocoder::DiscriminatorSet;

pub const MAGIC: &[u8; 8] = b"ADPTCKPT";
pub const FORMAT_VERSION: u32 = 1;

const GENERATOR: &str = "generator/";
const DISCRIMINATOR: &str = "discriminator/";
const BASE: &str = "base/";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self {
            shape: t.dims().to_vec(),
            data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), self.shape.as_slice(), &Device::Cpu)?)
    }
}

/// Optimizer bookkeeping kept in the header; the moments live in the tensor section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub lr: f64,
    pub slots: Vec<SlotState>,
}

/// Where a run stands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub run: RunConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Completed fine-tuning epochs.
    pub epoch: u64,
    pub generator_optimizer: Option<OptimizerMeta>,
    pub discriminator_optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorIndex {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: Config,
    vocab: Vocab,
    plan: AdapterPlacementPlan,
    base_vocab: Option<Vocab>,
    state: TrainState,
    tensors: Vec<TensorIndex>,
}

/// Everything needed to rebuild a model, its discriminators and optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub vocab: Vocab,
    pub plan: AdapterPlacementPlan,
    pub base_vocab: Option<Vocab>,
    pub state: TrainState,
    pub tensors: BTreeMap<String, StoredTensor>,
}

fn optim_key(which: &str, moment: &str, name: &str) -> String {
    format!("optimizer.{which}.{moment}/{name}")
}

fn store_params(out: &mut BTreeMap<String, StoredTensor>, prefix: &str, params: &NamedParams) -> Result<()> {
    for (name, var) in params {
        out.insert(format!("{prefix}{name}"), StoredTensor::from_tensor(var.as_tensor())?);
    }
    Ok(())
}

fn store_optimizer(out: &mut BTreeMap<String, StoredTensor>, which: &str, state: &AdamWState) -> OptimizerMeta {
    for s in &state.slots {
        for (moment, data) in [("m", &s.m), ("v", &s.v)] {
            out.insert(
                optim_key(which, moment, &s.name),
                StoredTensor {
                    shape: vec![data.len()],
                    data: data.clone(),
                },
            );
        }
    }
    OptimizerMeta {
        lr: state.lr,
        slots: state
            .slots
            .iter()
            .map(|s| SlotState {
                name: s.name.clone(),
                m: Vec::new(),
                v: Vec::new(),
                t: s.t.clone(),
            })
            .collect(),
    }
}

impl Checkpoint {
    pub fn capture(
        model: &TtsModel,
        discriminators: Option<&DiscriminatorSet>,
        state: TrainState,
        optimizers: Option<(&AdamWState, &AdamWState)>,
    ) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        store_params(&mut tensors, GENERATOR, &model.named_params(""))?;
        if let Some(d) = discriminators {
            store_params(&mut tensors, DISCRIMINATOR, &d.named_params(""))?;
        }
        let mut state = state;
        if let Some((g, d)) = optimizers {
            state.generator_optimizer = Some(store_optimizer(&mut tensors, "generator", g));
            state.discriminator_optimizer = Some(store_optimizer(&mut tensors, "discriminator", d));
        }
        if let Some(base) = &model.base {
            for (name, t) in [
                ("phoneme_embedding", &base.phoneme_embedding),
                ("speaker_table", &base.speaker_table),
                ("language_table", &base.language_table),
            ] {
                tensors.insert(format!("{BASE}{name}"), StoredTensor::from_tensor(t)?);
            }
        }
        Ok(Self {
            config: model.cfg.clone(),
            vocab: model.vocab.clone(),
            plan: model.adapters.plan().clone(),
            base_vocab: model.base.as_ref().map(|b| b.vocab.clone()),
            state,
            tensors,
        })
    }

    fn take(&self, key: &str) -> Result<&StoredTensor> {
        self.tensors
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))
    }

    fn load_params(&self, prefix: &str, params: &NamedParams) -> Result<()> {
        let expected = self.tensors.keys().filter(|k| k.starts_with(prefix)).count();
        if expected != params.len() {
            return Err(Error::Checkpoint(format!(
                "{expected} stored tensors under `{prefix}` for {} model parameters",
                params.len()
            )));
        }
        for (name, var) in params {
            let key = format!("{prefix}{name}");
            let stored = self.take(&key)?;
            if stored.shape != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{key}` has shape {:?}, the model expects {:?}",
                    stored.shape,
                    var.dims()
                )));
            }
            var.set(&stored.to_tensor()?)?;
        }
        Ok(())
    }

    /// Rebuilds the generator with its adapters and base tables.
    pub fn model(&self) -> Result<TtsModel> {
        let mut model = TtsModel::new(&self.config, &self.vocab, self.config.seed)?;
        if !self.plan.is_empty() {
            model.inject(&self.plan, self.config.seed)?;
        }
        self.load_params(GENERATOR, &model.named_params(""))?;
        if let Some(vocab) = &self.base_vocab {
            let get = |n: &str| self.take(&format!("{BASE}{n}"))?.to_tensor();
            model.base = Some(BaseTables {
                vocab: vocab.clone(),
                phoneme_embedding: get("phoneme_embedding")?,
                speaker_table: get("speaker_table")?,
                language_table: get("language_table")?,
            });
        }
        Ok(model)
    }

    pub fn has_discriminators(&self) -> bool {
        self.tensors.keys().any(|k| k.starts_with(DISCRIMINATOR))
    }

    pub fn discriminators(&self) -> Result<DiscriminatorSet> {
        if !self.has_discriminators() {
            return Err(Error::Checkpoint("no discriminator weights stored".into()));
        }
        let d = DiscriminatorSet::new(&mut Init::new(self.config.seed, DType::F32), &self.config.discriminator)?;
        self.load_params(DISCRIMINATOR, &d.named_params(""))?;
        Ok(d)
    }

    fn optimizer(&self, which: &str, meta: &Option<OptimizerMeta>) -> Result<Option<AdamWState>> {
        let Some(meta) = meta else { return Ok(None) };
        let slots = meta
            .slots
            .iter()
            .map(|s| {
                Ok(SlotState {
                    name: s.name.clone(),
                    m: self.take(&optim_key(which, "m", &s.name))?.data.clone(),
                    v: self.take(&optim_key(which, "v", &s.name))?.data.clone(),
                    t: s.t.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Some(AdamWState { lr: meta.lr, slots }))
    }

    pub fn generator_optimizer(&self) -> Result<Option<AdamWState>> {
        self.optimizer("generator", &self.state.generator_optimizer)
    }

    pub fn discriminator_optimizer(&self) -> Result<Option<AdamWState>> {
        self.optimizer("discriminator", &self.state.discriminator_optimizer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            plan: self.plan.clone(),
            base_vocab: self.base_vocab.clone(),
            state: self.state.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorIndex {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let body: usize = self.tensors.values().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(20 + json.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;
        let mut pos = 20 + len;
        let mut tensors = BTreeMap::new();
        for idx in header.tensors {
            let n: usize = idx.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| bad(format!("truncated tensor `{}`", idx.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            pos += 4 * n;
            tensors.insert(idx.name, StoredTensor { shape: idx.shape, data });
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            plan: header.plan,
            base_vocab: header.base_vocab,
            state: header.state,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
