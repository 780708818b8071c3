use candle_core::Tensor;
use rand::Rng;

use crate::error::Result;
use crate::nn::{Linear, ParamStore};

/// Two-hidden-layer tanh critic over flat feature vectors.
///
/// The gradient of the score with respect to the input is written out by hand from the layer
/// weights, so the gradient penalty stays differentiable in the critic parameters.
#[derive(Debug, Clone)]
pub struct Critic {
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl Critic {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Critic {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), hidden, hidden, rng)?,
            out: Linear::new(store, &format!("{name}.out"), hidden, 1, rng)?,
        })
    }

    fn hidden(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let h1 = self.l1.forward(x)?.tanh()?;
        let h2 = self.l2.forward(&h1)?.tanh()?;
        Ok((h1, h2))
    }

    /// `x: (B, F)` -> scores `(B,)`.
    pub fn score(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h2) = self.hidden(x)?;
        Ok(self.out.forward(&h2)?.squeeze(1)?)
    }

    /// Scores and `d score / d x` for each row.
    pub fn score_and_input_grad(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (h1, h2) = self.hidden(x)?;
        let score = self.out.forward(&h2)?.squeeze(1)?;
        let w3 = self.out.weight().t()?.contiguous()?; // (1, H)
        let g2 = (h2.sqr()?.affine(-1.0, 1.0)?).broadcast_mul(&w3)?;
        let g1 = g2.matmul(&self.l2.weight().t()?.contiguous()?)?.mul(&h1.sqr()?.affine(-1.0, 1.0)?)?;
        let gx = g1.matmul(&self.l1.weight().t()?.contiguous()?)?;
        Ok((score, gx))
    }

    /// Euclidean norm of the input gradient per row.
    pub fn input_grad_norm(&self, x: &Tensor) -> Result<Tensor> {
        let (_, gx) = self.score_and_input_grad(x)?;
        Ok((gx.sqr()?.sum(1)? + 1e-12)?.sqrt()?)
    }
}
