//! Small seeded layers on top of candle tensors.
//!
//! candle-nn initializes parameters and dropout masks from an unseeded thread RNG, so parameters
//! here live in a [`ParamStore`] filled from an explicit ChaCha stream and every random mask is
//! drawn from a caller-supplied RNG.

mod layers;
mod store;

pub use layers::{dropout, layer_norm, log_softmax_last, sigmoid, softmax_last, Attention, Embedding, Gru, LayerNorm, Linear, TransformerBlock};
pub use store::{Optimizer, ParamStore};

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Deterministic ChaCha stream used for every random draw in the crate.
pub type Rng64 = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    use rand::SeedableRng;
    Rng64::seed_from_u64(seed)
}

/// Standard normal tensor drawn from `rng`.
pub fn randn(shape: &[usize], dtype: DType, rng: &mut impl Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Row-major `f32` data into a tensor of the given dtype.
pub fn tensor_from(data: Vec<f32>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Flattened tensor contents as `f32`.
pub fn to_f32_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
}

/// Scalar tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}
