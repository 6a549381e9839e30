//! AdamW with decoupled weight decay and lazily updated lookup tables.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::nn::NamedParams;

struct Slot {
    name: String,
    var: Var,
    m: Vec<f32>,
    v: Vec<f32>,
    /// Row width for lookup tables, updated row by row.
    row: Option<usize>,
    /// Update count, per row for lookup tables.
    t: Vec<u64>,
}

/// Serializable optimizer moments and step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub lr: f64,
    pub slots: Vec<SlotState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotState {
    pub name: String,
    #[serde(skip)]
    pub m: Vec<f32>,
    #[serde(skip)]
    pub v: Vec<f32>,
    pub t: Vec<u64>,
}

pub struct AdamW {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    slots: Vec<Slot>,
}

impl AdamW {
    /// `lazy` selects lookup tables: rows whose gradient is exactly zero are
    /// left untouched, weight decay and moments included.
    pub fn new(params: NamedParams, cfg: &OptimizerConfig, lr: f64, lazy: impl Fn(&str) -> bool) -> Self {
        let slots = params
            .into_iter()
            .map(|(name, var)| {
                let n = var.elem_count();
                let row = if lazy(&name) && var.rank() == 2 { Some(var.dims()[1]) } else { None };
                let counters = row.map_or(1, |w| n / w.max(1));
                Slot {
                    name,
                    var,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    row,
                    t: vec![0; counters],
                }
            })
            .collect();
        Self {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            slots,
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn vars(&self) -> Vec<&Var> {
        self.slots.iter().map(|s| &s.var).collect()
    }

    /// Gradients for every slot, `None` where the graph does not reach.
    pub fn gradients(&self, store: &GradStore) -> Vec<Option<Tensor>> {
        self.slots.iter().map(|s| store.get(s.var.as_tensor()).cloned()).collect()
    }

    /// Applies one update; slots without a gradient are skipped.
    pub fn step(&mut self, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != self.slots.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), self.slots.len())));
        }
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        for (slot, g) in self.slots.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            let g: Vec<f32> = g.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1()?;
            let mut p: Vec<f32> = slot.var.as_tensor().flatten_all()?.to_vec1()?;
            let width = slot.row.unwrap_or(p.len());
            for (r, t) in slot.t.iter_mut().enumerate() {
                let range = r * width..(r + 1) * width;
                if slot.row.is_some() && g[range.clone()].iter().all(|&x| x == 0.0) {
                    continue;
                }
                *t += 1;
                let c1 = 1.0 - b1.powi(*t as i32);
                let c2 = 1.0 - b2.powi(*t as i32);
                for i in range {
                    let gi = g[i] as f64;
                    let m = b1 * slot.m[i] as f64 + (1.0 - b1) * gi;
                    let v = b2 * slot.v[i] as f64 + (1.0 - b2) * gi * gi;
                    slot.m[i] = m as f32;
                    slot.v[i] = v as f32;
                    let mut pi = p[i] as f64 * (1.0 - lr * wd);
                    pi -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                    p[i] = pi as f32;
                }
            }
            let t = Tensor::from_vec(p, slot.var.shape(), slot.var.device())?;
            slot.var.set(&t)?;
        }
        Ok(())
    }

    pub fn state(&self) -> AdamWState {
        AdamWState {
            lr: self.lr,
            slots: self
                .slots
                .iter()
                .map(|s| SlotState {
                    name: s.name.clone(),
                    m: s.m.clone(),
                    v: s.v.clone(),
                    t: s.t.clone(),
                })
                .collect(),
        }
    }

    pub fn load_state(&mut self, state: &AdamWState) -> Result<()> {
        if state.slots.len() != self.slots.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} parameters, expected {}",
                state.slots.len(),
                self.slots.len()
            )));
        }
        for (slot, s) in self.slots.iter_mut().zip(&state.slots) {
            if slot.name != s.name || slot.m.len() != s.m.len() || slot.v.len() != s.v.len() || slot.t.len() != s.t.len() {
                return Err(Error::Checkpoint(format!("optimizer state mismatch at `{}`", slot.name)));
            }
            slot.m.clone_from(&s.m);
            slot.v.clone_from(&s.v);
            slot.t.clone_from(&s.t);
        }
        self.lr = state.lr;
        Ok(())
    }
}

/// Sums per-slot gradients of several micro-batches and divides by their count.
pub fn average_gradients(parts: Vec<Vec<Option<Tensor>>>) -> Result<Vec<Option<Tensor>>> {
    let k = parts.len();
    let mut iter = parts.into_iter();
    let Some(mut acc) = iter.next() else {
        return Ok(Vec::new());
    };
    for part in iter {
        for (a, g) in acc.iter_mut().zip(part) {
            *a = match (a.take(), g) {
                (Some(x), Some(y)) => Some((x + y)?),
                (x, y) => x.or(y),
            };
        }
    }
    if k > 1 {
        for a in acc.iter_mut().flatten() {
            *a = (&*a / k as f64)?;
        }
    }
    Ok(acc)
}

/// `initial_lr * gamma^epoch`.
pub fn lr_at_epoch(initial_lr: f64, gamma: f64, epoch: u64) -> f64 {
    initial_lr * gamma.powf(epoch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::{DType, Device};

    fn reference_adamw(p: f64, grads: &[f64], lr: f64, cfg: &OptimizerConfig) -> f64 {
        let (mut m, mut v, mut p) = (0.0, 0.0, p);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            p -= lr * cfg.weight_decay * p;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            p -= lr * mh / (vh.sqrt() + cfg.eps);
        }
        p
    }

    #[test]
    fn matches_scalar_reference() {
        let cfg = OptimizerConfig::default();
        let init = Init::new(0, DType::F32);
        let var = init.constant(&[3], 0.5).unwrap();
        let mut opt = AdamW::new(vec![("w".into(), var.clone())], &cfg, 1e-2, |_| false);
        let grads = [0.3, -0.2, 0.7, 0.05];
        for g in grads {
            let t = Tensor::new(&[g as f32, g as f32, g as f32], &Device::Cpu).unwrap();
            opt.step(&[Some(t)]).unwrap();
        }
        let want = reference_adamw(0.5, &grads, 1e-2, &cfg);
        for got in var.as_tensor().to_vec1::<f32>().unwrap() {
            assert!((got as f64 - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn lazy_tables_skip_zero_gradient_rows() {
        let cfg = OptimizerConfig::default();
        let init = Init::new(0, DType::F32);
        let table = init.constant(&[3, 2], 1.0).unwrap();
        let dense = init.constant(&[2], 1.0).unwrap();
        let mut opt = AdamW::new(
            vec![("table".into(), table.clone()), ("dense".into(), dense.clone())],
            &cfg,
            1e-1,
            |n| n == "table",
        );
        let g = Tensor::new(&[[0f32, 0.0], [1.0, -1.0], [0.0, 0.0]], &Device::Cpu).unwrap();
        let zero = Tensor::zeros(2, DType::F32, &Device::Cpu).unwrap();
        opt.step(&[Some(g), Some(zero)]).unwrap();
        let rows = table.as_tensor().to_vec2::<f32>().unwrap();
        assert_eq!(rows[0], vec![1.0, 1.0]);
        assert_eq!(rows[2], vec![1.0, 1.0]);
        assert_ne!(rows[1], vec![1.0, 1.0]);
        // Dense parameters still decay without a gradient signal.
        assert!(dense.as_tensor().to_vec1::<f32>().unwrap().iter().all(|&v| v < 1.0));
        assert_eq!(opt.state().slots[0].t, vec![0, 1, 0]);
    }

    #[test]
    fn lr_schedule_is_exponential_per_epoch() {
        for e in 0..300u64 {
            let want = 1e-4 * 0.99f64.powi(e as i32);
            assert!((lr_at_epoch(1e-4, 0.99, e) - want).abs() <= 1e-12 * want.max(1e-30) + 1e-20);
        }
    }

    #[test]
    fn averaging_micro_batches() {
        let a = Tensor::new(&[1f32, 3.0], &Device::Cpu).unwrap();
        let b = Tensor::new(&[3f32, 5.0], &Device::Cpu).unwrap();
        let avg = average_gradients(vec![vec![Some(a), None], vec![Some(b), None]]).unwrap();
        assert_eq!(avg[0].as_ref().unwrap().to_vec1::<f32>().unwrap(), vec![2.0, 4.0]);
        assert!(avg[1].is_none());
    }
}
