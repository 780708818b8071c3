use candle_core::{Device, Tensor, D};
use rand::Rng;

use super::store::ParamStore;
use crate::error::Result;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x.neg()?.exp()? + 1.0)?).recip()?)
}

/// Softmax over the last dimension (shift by the detached row maximum).
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Inverted dropout with a mask drawn from `rng`. `p == 0` is the identity.
pub fn dropout(x: &Tensor, p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.gen::<f64>() < keep { (1.0 / keep) as f32 } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), &Device::Cpu)?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Dense layer; weight stored as `(in, out)`. Accepts inputs of any rank with `in` last.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?;
        let bias = Some(store.uniform(&format!("{name}.bias"), &[out_dim], bound, rng)?);
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn no_bias(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?;
        Ok(Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let flat = x.reshape((rows, self.in_dim))?;
        let mut y = flat.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

/// Lookup table; rows can be selected by index or mixed by a weight matrix.
#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Embedding {
            table: store.normal(name, &[rows, dim], 1.0, rng)?,
        })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn rows(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        let idx = Tensor::from_slice(ids, ids.len(), &Device::Cpu)?;
        Ok(self.table.index_select(&idx, 0)?)
    }

    /// `weights (R, rows) @ table`: one-hot rows select, zero rows give zero vectors.
    pub fn mix(&self, weights: &Tensor) -> Result<Tensor> {
        Ok(weights.matmul(&self.table)?)
    }
}

/// Gated recurrent unit in the usual reset/update/candidate formulation.
#[derive(Debug, Clone)]
pub struct Gru {
    input: Linear,
    hidden: Linear,
    hidden_dim: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Gru {
            input: Linear::new(store, &format!("{name}.ih"), in_dim, 3 * hidden_dim, rng)?,
            hidden: Linear::new(store, &format!("{name}.hh"), hidden_dim, 3 * hidden_dim, rng)?,
            hidden_dim,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// `x: (B, T, in)` -> outputs `(B, T, H)` and the final state `(B, H)`.
    pub fn forward(&self, x: &Tensor, h0: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (b, t, _) = x.dims3()?;
        let h_dim = self.hidden_dim;
        let xw = self.input.forward(x)?;
        let mut h = match h0 {
            Some(h) => h.clone(),
            None => Tensor::zeros((b, h_dim), x.dtype(), &Device::Cpu)?,
        };
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let xs = xw.narrow(1, step, 1)?.squeeze(1)?;
            let hs = self.hidden.forward(&h)?;
            let r = sigmoid(&(xs.narrow(1, 0, h_dim)? + hs.narrow(1, 0, h_dim)?)?)?;
            let z = sigmoid(&(xs.narrow(1, h_dim, h_dim)? + hs.narrow(1, h_dim, h_dim)?)?)?;
            let n = (xs.narrow(1, 2 * h_dim, h_dim)? + r.mul(&hs.narrow(1, 2 * h_dim, h_dim)?)?)?.tanh()?;
            h = (&n + z.mul(&(&h - &n)?)?)?;
            outputs.push(h.clone());
        }
        Ok((Tensor::stack(&outputs, 1)?, h))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.ones(&format!("{name}.gamma"), &[dim])?,
            beta: store.zeros(&format!("{name}.beta"), &[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta)
    }
}

/// Multi-head self-attention over `(B, T, W)`.
#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    out: Linear,
    heads: usize,
    width: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(crate::Error::invalid(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Attention {
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, rng)?,
            out: Linear::new(store, &format!("{name}.out"), width, width, rng)?,
            heads,
            width,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let dh = self.width / self.heads;
        let qkv = self.qkv.forward(x)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, i * self.width, self.width)?
                .reshape((b, t, self.heads, dh))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dh as f64).sqrt())?;
        let weights = softmax_last(&scores)?;
        let ctx = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, self.width))?;
        self.out.forward(&ctx)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width)?,
            attn: Attention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), width, 2 * width, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), 2 * width, width, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, dropout_p: f64, rng: &mut impl Rng) -> Result<Tensor> {
        let a = dropout(&self.attn.forward(&self.norm1.forward(x)?)?, dropout_p, rng)?;
        let x = (x + a)?;
        let f = self.ff2.forward(&self.ff1.forward(&self.norm2.forward(&x)?)?.relu()?)?;
        Ok((&x + dropout(&f, dropout_p, rng)?)?)
    }
}
