//! Adapter blocks, placement plans and freeze management.
//!
//! A plan is a list of `(attachment point, adapter spec)` entries. Attachment
//! points are dotted paths exposed by the generator, e.g.
//! `acoustic.encoder.3` or `vocoder.stage1.res2`; an adapter placed there
//! takes the output of that layer and replaces it.
//!
//! Plans serialize to a TOML section:
//!
//! ```toml
//! [[adapter]]
//! point = "acoustic.encoder.0"
//! type = "bottleneck"
//! input_dim = 256
//! bottleneck_dim = 16
//! ```

mod blocks;
mod freeze;

use std::collections::{BTreeMap, BTreeSet};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use blocks::{Adapter, BottleneckAdapter, ConvAdapter, SqueezeExcite};
pub use freeze::{apply_freeze, count_parameters, FreezeSpec, ParamCounts};

use crate::config::{AdapterConfig, ModelKind, PlanVariant};
use crate::error::{Error, Result};
use crate::nn::{join, Init, NamedParams, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckAdapterSpec {
    pub input_dim: usize,
    pub bottleneck_dim: usize,
}

impl BottleneckAdapterSpec {
    pub fn param_count(&self) -> usize {
        2 * self.input_dim * self.bottleneck_dim + self.bottleneck_dim + self.input_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvAdapterSpec {
    pub channels: usize,
    /// The middle convolution is depthwise.
    pub kernel_sizes: [usize; 3],
    pub layer_norm: bool,
    pub se_reduction: usize,
}

impl ConvAdapterSpec {
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let [k1, k2, k3] = self.kernel_sizes;
        let hidden = (c / self.se_reduction).max(1);
        let convs = (c * c * k1 + c) + (c * k2 + c) + (c * c * k3 + c);
        let norms = if self.layer_norm { 4 * c } else { 0 };
        let se = (c * hidden + hidden) + (hidden * c + c);
        convs + norms + se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AdapterSpec {
    Bottleneck(BottleneckAdapterSpec),
    Conv(ConvAdapterSpec),
}

impl AdapterSpec {
    pub fn param_count(&self) -> usize {
        match self {
            AdapterSpec::Bottleneck(s) => s.param_count(),
            AdapterSpec::Conv(s) => s.param_count(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            AdapterSpec::Bottleneck(s) => s.input_dim,
            AdapterSpec::Conv(s) => s.channels,
        }
    }

    /// Fresh identity-initialized adapter.
    pub fn build(&self, init: &mut Init) -> Result<Adapter> {
        Ok(match self {
            AdapterSpec::Bottleneck(s) => Adapter::Bottleneck(BottleneckAdapter::new(init, s)?),
            AdapterSpec::Conv(s) => Adapter::Conv(ConvAdapter::new(init, s)?),
        })
    }
}

/// Kind of layer behind an attachment point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    AcousticConv,
    VocoderUpsample,
    VocoderResidual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachmentPoint {
    pub path: String,
    pub channels: usize,
    pub site: Site,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub point: String,
    #[serde(flatten)]
    pub spec: AdapterSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterPlacementPlan {
    #[serde(rename = "adapter", default)]
    pub entries: Vec<PlanEntry>,
}

impl AdapterPlacementPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.spec.param_count()).sum()
    }

    /// Parameters added under points starting with `prefix`.
    pub fn param_count_under(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.point.starts_with(prefix))
            .map(|e| e.spec.param_count())
            .sum()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Adapter(format!("invalid placement plan: {e}")))
    }

    /// Checks that every point exists with matching channels and appears once.
    pub fn validate(&self, points: &[AttachmentPoint]) -> Result<()> {
        let known: BTreeMap<&str, &AttachmentPoint> = points.iter().map(|p| (p.path.as_str(), p)).collect();
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let p = known
                .get(e.point.as_str())
                .ok_or_else(|| Error::Adapter(format!("unknown attachment point `{}`", e.point)))?;
            if !seen.insert(e.point.as_str()) {
                return Err(Error::Adapter(format!("duplicate attachment point `{}`", e.point)));
            }
            if e.spec.channels() != p.channels {
                return Err(Error::Adapter(format!(
                    "adapter at `{}` has {} channels, the layer has {}",
                    e.point,
                    e.spec.channels(),
                    p.channels
                )));
            }
        }
        Ok(())
    }
}

/// Builds one of the placement variants over the given attachment points.
///
/// * `paper_default`: a bottleneck adapter after every acoustic conv layer,
///   a conv adapter after every vocoder upsampling layer and residual block.
/// * `vocoder_reduced`: as above, but the vocoder keeps only the adapters
///   that follow the upsampling layers.
/// * `full_model`: bottleneck adapters at every point.
///
/// `kind` restricts the plan to the acoustic model, the vocoder, or both.
pub fn build_placement_plan(
    kind: ModelKind,
    variant: PlanVariant,
    points: &[AttachmentPoint],
    cfg: &AdapterConfig,
) -> Result<AdapterPlacementPlan> {
    let bottleneck = |c| {
        AdapterSpec::Bottleneck(BottleneckAdapterSpec {
            input_dim: c,
            bottleneck_dim: cfg.bottleneck_dim,
        })
    };
    let conv = |c| {
        let k = &cfg.conv_kernel_sizes;
        AdapterSpec::Conv(ConvAdapterSpec {
            channels: c,
            kernel_sizes: [k[0], k[1], k[2]],
            layer_norm: cfg.layer_norm,
            se_reduction: cfg.se_reduction,
        })
    };
    let mut entries = Vec::new();
    for p in points {
        let acoustic = p.site == Site::AcousticConv;
        let wanted = match kind {
            ModelKind::Acoustic => acoustic,
            ModelKind::Vocoder => !acoustic,
            ModelKind::Both => true,
        };
        if !wanted {
            continue;
        }
        let spec = match (variant, p.site) {
            (PlanVariant::FullModel, _) => Some(bottleneck(p.channels)),
            (_, Site::AcousticConv) => Some(bottleneck(p.channels)),
            (_, Site::VocoderUpsample) => Some(conv(p.channels)),
            (PlanVariant::PaperDefault, Site::VocoderResidual) => Some(conv(p.channels)),
            (PlanVariant::VocoderReduced, Site::VocoderResidual) => None,
        };
        if let Some(spec) = spec {
            entries.push(PlanEntry {
                point: p.path.clone(),
                spec,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::Adapter(format!("plan `{variant}` for `{kind}` selects no attachment point")));
    }
    Ok(AdapterPlacementPlan { entries })
}

/// Parameter-path prefix of all injected adapters.
pub const ADAPTER_PREFIX: &str = "adapters";

/// Adapters currently injected into a model, keyed by attachment point.
#[derive(Debug, Clone, Default)]
pub struct AdapterSet {
    adapters: BTreeMap<String, Adapter>,
    plan: AdapterPlacementPlan,
}

impl AdapterSet {
    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn plan(&self) -> &AdapterPlacementPlan {
        &self.plan
    }

    pub fn contains(&self, point: &str) -> bool {
        self.adapters.contains_key(point)
    }

    /// Adds identity-initialized adapters for every plan entry.
    pub fn inject(&mut self, plan: &AdapterPlacementPlan, points: &[AttachmentPoint], init: &mut Init) -> Result<()> {
        plan.validate(points)?;
        if let Some(e) = plan.entries.iter().find(|e| self.contains(&e.point)) {
            return Err(Error::Adapter(format!("an adapter is already injected at `{}`", e.point)));
        }
        for e in &plan.entries {
            self.adapters.insert(e.point.clone(), e.spec.build(init)?);
            self.plan.entries.push(e.clone());
        }
        Ok(())
    }

    /// Routes `x` through the adapter at `point`, if any.
    pub fn apply(&self, point: &str, x: Tensor) -> Result<Tensor> {
        match self.adapters.get(point) {
            Some(a) => a.forward(&x),
            None => Ok(x),
        }
    }

    pub fn clear(&mut self) {
        self.adapters.clear();
        self.plan.entries.clear();
    }
}

impl Parameterized for AdapterSet {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams) {
        for (point, a) in &self.adapters {
            a.visit_params(&join(prefix, point), out);
        }
    }
}
