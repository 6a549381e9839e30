//! Partition of generator parameters into frozen and trainable sets.

use glob::Pattern;
use serde::{Deserialize, Serialize};

use super::ADAPTER_PREFIX;
use crate::error::{Error, Result};
use crate::nn::NamedParams;

/// Glob patterns over dotted parameter paths; matching parameters are
/// trainable, everything else is frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub trainable_patterns: Vec<String>,
}

impl FreezeSpec {
    /// Nothing trainable.
    pub fn frozen() -> Self {
        Self {
            trainable_patterns: Vec::new(),
        }
    }

    /// Everything trainable.
    pub fn full() -> Self {
        Self {
            trainable_patterns: vec!["*".into()],
        }
    }

    /// Adapters plus the phoneme, speaker and language lookup tables.
    pub fn adapters() -> Self {
        Self {
            trainable_patterns: vec![
                format!("{ADAPTER_PREFIX}.*"),
                "acoustic.phoneme_embedding".into(),
                "acoustic.speaker_table".into(),
                "acoustic.language_table".into(),
            ],
        }
    }

    fn compiled(&self) -> Result<Vec<Pattern>> {
        self.trainable_patterns
            .iter()
            .map(|p| Pattern::new(p).map_err(|e| Error::Adapter(format!("invalid freeze pattern `{p}`: {e}"))))
            .collect()
    }

    /// Splits `params` into `(trainable, frozen)`, preserving order.
    pub fn partition(&self, params: &NamedParams) -> Result<(NamedParams, NamedParams)> {
        let patterns = self.compiled()?;
        let mut hits = vec![0usize; patterns.len()];
        let (mut trainable, mut frozen) = (Vec::new(), Vec::new());
        for (name, var) in params {
            let mut matched = false;
            for (i, p) in patterns.iter().enumerate() {
                if p.matches(name) {
                    hits[i] += 1;
                    matched = true;
                }
            }
            if matched {
                trainable.push((name.clone(), var.clone()));
            } else {
                frozen.push((name.clone(), var.clone()));
            }
        }
        if let Some(i) = hits.iter().position(|&h| h == 0) {
            return Err(Error::Adapter(format!(
                "freeze pattern `{}` matches no parameter",
                self.trainable_patterns[i]
            )));
        }
        Ok((trainable, frozen))
    }
}

/// The trainable parameters of `params` under `spec`.
pub fn apply_freeze(params: &NamedParams, spec: &FreezeSpec) -> Result<NamedParams> {
    Ok(spec.partition(params)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub frozen: usize,
    pub trainable: usize,
    /// Parameters outside the adapters, i.e. the original model.
    pub backbone: usize,
    /// `trainable / backbone`.
    pub ratio: f64,
}

pub fn count_parameters(params: &NamedParams, spec: &FreezeSpec) -> Result<ParamCounts> {
    let (trainable, frozen) = spec.partition(params)?;
    let size = |ps: &NamedParams| ps.iter().map(|(_, v)| v.elem_count()).sum::<usize>();
    let adapter_prefix = format!("{ADAPTER_PREFIX}.");
    let backbone = params
        .iter()
        .filter(|(n, _)| !n.starts_with(&adapter_prefix))
        .map(|(_, v)| v.elem_count())
        .sum::<usize>();
    let trainable = size(&trainable);
    Ok(ParamCounts {
        frozen: size(&frozen),
        trainable,
        backbone,
        ratio: if backbone == 0 { 0.0 } else { trainable as f64 / backbone as f64 },
    })
}
