//! Tensor plumbing shared by the generator, the discriminators and the
//! recognizer: seeded initialization, named parameters and basic layers.

pub mod layers;
pub mod pqmf;
pub mod spectral;
pub mod unfold;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Ordered list of `(path, parameter)` pairs.
pub type NamedParams = Vec<(String, Var)>;

/// Anything owning trainable tensors.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, out: &mut NamedParams);

    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut out = Vec::new();
        self.visit_params(prefix, &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_params("").iter().map(|(_, v)| v.elem_count()).sum()
    }
}

/// Joins two parameter path segments with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
    pub dtype: DType,
    pub device: Device,
}

impl Init {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
        }
    }

    fn from_values(&self, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std is finite and >= 0");
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.from_values(values, shape)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.from_values(values, shape)
    }

    pub fn constant(&self, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.from_values(vec![value; n], shape)
    }

    pub fn zeros(&self, shape: &[usize]) -> Result<Var> {
        self.constant(shape, 0.0)
    }
}

/// Leaky rectifier built from differentiable primitives.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Flattens any tensor to a `Vec<f64>`.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

/// Scalar tensor to `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
