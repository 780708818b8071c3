use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer as _, ParamsAdamW};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};

/// Named parameters in insertion-independent (sorted) order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    params: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            dtype,
            params: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn insert(&mut self, name: &str, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.params.contains_key(name) {
            return Err(Error::invalid(format!("parameter {name:?} declared twice")));
        }
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.params.insert(name.to_string(), var);
        Ok(tensor)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound);
            (0..n).map(|_| rng.sample(dist)).collect()
        } else {
            vec![0.0; n]
        };
        self.insert(name, data, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.insert(name, data, shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, vec![0.0; shape.iter().product()], shape)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, vec![1.0; shape.iter().product()], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    /// Vars whose name starts with `prefix`.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of all current values.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites values in place; layers holding these parameters see the new values.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.params {
            let v = values
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name:?}")))?;
            if v.dims() != var.dims() {
                return Err(Error::invalid(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    v.dims(),
                    var.dims()
                )));
            }
            var.set(&v.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Bitwise equality of every parameter.
    pub fn same_values(&self, other: &BTreeMap<String, Tensor>) -> Result<bool> {
        for (name, var) in &self.params {
            let Some(o) = other.get(name) else { return Ok(false) };
            let a = var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            let b = o.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: std::collections::HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
        }
        let loaded = candle_core::safetensors::load(path, &Device::Cpu)?;
        let values: BTreeMap<String, Tensor> = loaded.into_iter().collect();
        self.restore(&values)
    }
}

/// Adam over a fixed set of vars (AdamW with zero weight decay).
pub struct Optimizer {
    inner: AdamW,
    vars: Vec<Var>,
    clip: Option<f64>,
}

impl Optimizer {
    pub fn adam(vars: Vec<Var>, learning_rate: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr: learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Optimizer {
            inner: AdamW::new(vars.clone(), params)?,
            vars,
            clip: None,
        })
    }

    /// Rescale gradients so their global L2 norm is at most `max_norm`.
    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip = Some(max_norm);
        self
    }

    pub fn learning_rate(&self) -> f64 {
        self.inner.learning_rate()
    }

    /// One update from `loss`. A step whose gradients are not finite is skipped; returns
    /// whether the parameters changed.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<bool> {
        let mut grads = loss.backward()?;
        let mut total = 0.0f64;
        for v in &self.vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        let norm = total.sqrt();
        if !norm.is_finite() {
            log::warn!("skipping optimizer step with non-finite gradient norm");
            return Ok(false);
        }
        if let Some(max_norm) = self.clip {
            if norm > max_norm {
                let scale = max_norm / norm;
                for v in &self.vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        grads.insert(v.as_tensor(), g.affine(scale, 0.0)?);
                    }
                }
            }
        }
        self.inner.step(&grads)?;
        Ok(true)
    }
}
