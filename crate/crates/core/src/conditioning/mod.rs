//! Feature labels -> stochastic conditioning latent.
//!
//! Each categorical slot has its own embedding table. A label row is a weight vector over that
//! slot's vocabulary: one-hot for a hard label, a probability vector for a predicted label and all
//! zeros for a missing one, so all three go through the same `weights @ table` product.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FrameLabels, CATEGORICAL_SLOTS, MISSING};
use crate::nn::{Embedding, Linear, ParamStore};

/// Bound applied to `logvar` before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    /// Embedding width per slot.
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            embed_dim: 8,
            latent_dim: 32,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    Sample,
    Deterministic,
}

/// Per-slot label weights for `rows` frames plus the occurrence channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelInput {
    rows: usize,
    vocab_sizes: Vec<usize>,
    weights: Vec<Vec<f32>>,
    occurrence: Vec<f32>,
}

impl LabelInput {
    /// All labels missing.
    pub fn missing(rows: usize, vocab_sizes: &[usize]) -> Self {
        LabelInput {
            rows,
            vocab_sizes: vocab_sizes.to_vec(),
            weights: vocab_sizes.iter().map(|&v| vec![0.0; rows * v]).collect(),
            occurrence: vec![0.0; rows],
        }
    }

    /// Hard labels, one row per frame.
    pub fn from_frames(frames: &[FrameLabels], vocab_sizes: &[usize]) -> Result<Self> {
        let mut input = LabelInput::missing(frames.len(), vocab_sizes);
        for (r, f) in frames.iter().enumerate() {
            input.set_hard(r, f)?;
        }
        Ok(input)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn set_hard(&mut self, row: usize, labels: &FrameLabels) -> Result<()> {
        for slot in 0..CATEGORICAL_SLOTS {
            let v = labels.categorical[slot];
            let size = self.vocab_sizes[slot];
            let w = &mut self.weights[slot][row * size..(row + 1) * size];
            w.fill(0.0);
            if v == MISSING {
                continue;
            }
            if !(0..size as i32).contains(&v) {
                return Err(Error::invalid(format!("slot {slot}: label {v} outside -1 or [0, {size})")));
            }
            w[v as usize] = 1.0;
        }
        if !(0.0..=1.0).contains(&labels.occurrence) {
            return Err(Error::invalid(format!("occurrence {} outside [0, 1]", labels.occurrence)));
        }
        self.occurrence[row] = labels.occurrence;
        Ok(())
    }

    /// Replaces one slot of one row with a probability vector.
    pub fn set_soft(&mut self, row: usize, slot: usize, dist: &[f32]) -> Result<()> {
        let size = self.vocab_sizes[slot];
        if dist.len() != size {
            return Err(Error::invalid(format!("slot {slot}: distribution has {} entries, vocabulary {size}", dist.len())));
        }
        self.weights[slot][row * size..(row + 1) * size].copy_from_slice(dist);
        Ok(())
    }

    /// Whether `slot` of `row` carries any weight.
    pub fn is_set(&self, row: usize, slot: usize) -> bool {
        let size = self.vocab_sizes[slot];
        self.weights[slot][row * size..(row + 1) * size].iter().any(|&w| w != 0.0)
    }

    pub fn set_occurrence(&mut self, row: usize, value: f32) {
        self.occurrence[row] = value;
    }

    /// Every slot of every row is empty and occurrence is zero.
    pub fn is_all_missing(&self) -> bool {
        self.weights.iter().flatten().all(|&w| w == 0.0) && self.occurrence.iter().all(|&o| o == 0.0)
    }

    /// Rows concatenated in order.
    pub fn concat(parts: &[LabelInput]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("no label inputs to concatenate"))?;
        let mut out = LabelInput::missing(0, &first.vocab_sizes);
        for p in parts {
            out.rows += p.rows;
            for (w, pw) in out.weights.iter_mut().zip(&p.weights) {
                w.extend_from_slice(pw);
            }
            out.occurrence.extend_from_slice(&p.occurrence);
        }
        Ok(out)
    }

    pub(crate) fn slot_tensor(&self, slot: usize, dtype: DType) -> Result<Tensor> {
        crate::nn::tensor_from(self.weights[slot].clone(), &[self.rows, self.vocab_sizes[slot]], dtype)
    }

    pub(crate) fn occurrence_tensor(&self, dtype: DType) -> Result<Tensor> {
        crate::nn::tensor_from(self.occurrence.clone(), &[self.rows, 1], dtype)
    }
}

/// One embedding table per categorical slot, all of width `E`.
#[derive(Debug, Clone)]
pub struct LabelEmbeddingBank {
    tables: Vec<Embedding>,
    embed_dim: usize,
}

impl LabelEmbeddingBank {
    pub fn new(store: &mut ParamStore, name: &str, schema: &FeatureSchema, embed_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let tables = schema
            .vocab_sizes()
            .iter()
            .enumerate()
            .map(|(s, &v)| Embedding::new(store, &format!("{name}.slot{s:02}"), v, embed_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelEmbeddingBank { tables, embed_dim })
    }

    pub fn table(&self, slot: usize) -> &Tensor {
        self.tables[slot].table()
    }

    /// Width of an embedded row: `16 E + 1`.
    pub fn output_dim(&self) -> usize {
        CATEGORICAL_SLOTS * self.embed_dim + 1
    }

    /// `(rows, 16 E + 1)`: per-slot `weights @ table`, then the occurrence value.
    pub fn embed(&self, input: &LabelInput) -> Result<Tensor> {
        let dtype = self.tables[0].table().dtype();
        let mut parts = Vec::with_capacity(CATEGORICAL_SLOTS + 1);
        for (s, table) in self.tables.iter().enumerate() {
            parts.push(table.mix(&input.slot_tensor(s, dtype)?)?);
        }
        parts.push(input.occurrence_tensor(dtype)?);
        Ok(Tensor::cat(&parts, 1)?)
    }
}

/// Embedding of a single frame as a plain vector.
pub fn embed_labels(labels: &FrameLabels, bank: &LabelEmbeddingBank) -> Result<Vec<f32>> {
    let sizes: Vec<usize> = bank.tables.iter().map(Embedding::rows).collect();
    let input = LabelInput::from_frames(std::slice::from_ref(labels), &sizes)?;
    crate::nn::to_f32_vec(&bank.embed(&input)?)
}

/// `mu + exp(clamp(logvar) / 2) * noise`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Result<Tensor> {
    let std = (logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)? * 0.5)?.exp()?;
    Ok((mu + std.mul(noise)?)?)
}

/// Mean over rows of `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let lv = logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    let per = ((lv.exp()? + mu.sqr()?)? - lv)?.affine(0.5, -0.5)?;
    Ok(per.sum(1)?.mean_all()?)
}

#[derive(Debug, Clone)]
pub struct ConditioningLatent {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub sample: Tensor,
}

/// Embedding bank followed by a one-hidden-layer MLP producing `(mu, logvar)`.
#[derive(Debug, Clone)]
pub struct Conditioner {
    bank: LabelEmbeddingBank,
    hidden: Linear,
    mu: Linear,
    logvar: Linear,
    latent_dim: usize,
}

impl Conditioner {
    pub fn new(store: &mut ParamStore, name: &str, schema: &FeatureSchema, cfg: &ConditioningConfig, rng: &mut impl Rng) -> Result<Self> {
        let bank = LabelEmbeddingBank::new(store, &format!("{name}.embed"), schema, cfg.embed_dim, rng)?;
        let hidden = Linear::new(store, &format!("{name}.hidden"), bank.output_dim(), cfg.hidden, rng)?;
        let mu = Linear::new(store, &format!("{name}.mu"), cfg.hidden, cfg.latent_dim, rng)?;
        let logvar = Linear::new(store, &format!("{name}.logvar"), cfg.hidden, cfg.latent_dim, rng)?;
        Ok(Conditioner {
            bank,
            hidden,
            mu,
            logvar,
            latent_dim: cfg.latent_dim,
        })
    }

    pub fn bank(&self) -> &LabelEmbeddingBank {
        &self.bank
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Latent parameters from already embedded rows.
    pub fn from_embedding(&self, embedded: &Tensor, mode: LatentMode, rng: &mut impl Rng) -> Result<ConditioningLatent> {
        let h = self.hidden.forward(embedded)?.relu()?;
        let mu = self.mu.forward(&h)?;
        let logvar = self.logvar.forward(&h)?;
        let sample = match mode {
            LatentMode::Deterministic => mu.clone(),
            LatentMode::Sample => {
                let n = mu.elem_count();
                let noise: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let noise = Tensor::from_vec(noise, mu.dims(), &Device::Cpu)?.to_dtype(mu.dtype())?;
                reparameterize(&mu, &logvar, &noise)?
            }
        };
        Ok(ConditioningLatent { mu, logvar, sample })
    }

    /// Labels -> embedding -> MLP -> latent. One latent per row.
    pub fn condition(&self, input: &LabelInput, mode: LatentMode, rng: &mut impl Rng) -> Result<ConditioningLatent> {
        self.from_embedding(&self.bank.embed(input)?, mode, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{scalar, seeded, to_f32_vec};
    use rand::Rng;
    use proptest::prelude::*;

    fn bank(dtype: DType) -> (ParamStore, LabelEmbeddingBank) {
        let mut store = ParamStore::new(dtype);
        let b = LabelEmbeddingBank::new(&mut store, "b", &FeatureSchema::default(), 8, &mut seeded(0)).unwrap();
        (store, b)
    }

    #[test]
    fn all_missing_embeds_to_exact_zero() {
        let (_, b) = bank(DType::F32);
        let v = embed_labels(&FrameLabels::MISSING, &b).unwrap();
        assert_eq!(v.len(), 16 * 8 + 1);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_slot_selects_its_row() {
        let (_, b) = bank(DType::F32);
        let mut labels = FrameLabels::MISSING;
        labels.categorical[5] = 2;
        let v = embed_labels(&labels, &b).unwrap();
        let row = to_f32_vec(&b.table(5).get(2).unwrap()).unwrap();
        for s in 0..16 {
            let seg = &v[s * 8..(s + 1) * 8];
            if s == 5 {
                assert_eq!(seg, row.as_slice());
            } else {
                assert!(seg.iter().all(|&x| x == 0.0));
            }
        }
        assert_eq!(v[128], 0.0);
    }

    #[test]
    fn occurrence_passes_through() {
        let (_, b) = bank(DType::F32);
        let mut labels = FrameLabels::MISSING;
        labels.occurrence = 0.7;
        let v = embed_labels(&labels, &b).unwrap();
        assert!(v[..128].iter().all(|&x| x == 0.0));
        assert_eq!(v[128], 0.7);
    }

    #[test]
    fn out_of_range_label_names_slot() {
        let (_, b) = bank(DType::F32);
        let mut labels = FrameLabels::MISSING;
        labels.categorical[11] = 6;
        let err = embed_labels(&labels, &b).unwrap_err().to_string();
        assert!(err.contains("slot 11"), "{err}");
    }

    #[test]
    fn soft_rows_are_expected_embeddings() {
        let (_, b) = bank(DType::F64);
        let sizes = FeatureSchema::default().vocab_sizes();
        let mut soft = LabelInput::missing(1, &sizes);
        let mut one_hot = vec![0.0f32; sizes[3]];
        one_hot[4] = 1.0;
        soft.set_soft(0, 3, &one_hot).unwrap();
        let mut hard_labels = FrameLabels::MISSING;
        hard_labels.categorical[3] = 4;
        let hard = LabelInput::from_frames(&[hard_labels], &sizes).unwrap();
        assert_eq!(to_f32_vec(&b.embed(&soft).unwrap()).unwrap(), to_f32_vec(&b.embed(&hard).unwrap()).unwrap());

        let mut half = vec![0.0f32; sizes[3]];
        half[0] = 0.5;
        half[1] = 0.5;
        soft.set_soft(0, 3, &half).unwrap();
        let e = b.embed(&soft).unwrap().to_vec2::<f64>().unwrap();
        let t = b.table(3).to_vec2::<f64>().unwrap();
        for c in 0..8 {
            assert!((e[0][3 * 8 + c] - 0.5 * (t[0][c] + t[1][c])).abs() < 1e-12);
        }
    }

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v, (1, v.len()), &Device::Cpu).unwrap()
    }

    #[test]
    fn reparameterize_examples() {
        let mu = vec_t(&[1.0, -2.0]);
        let lv = vec_t(&[0.3, -1.0]);
        let s = reparameterize(&mu, &lv, &vec_t(&[0.0, 0.0])).unwrap();
        assert_eq!(s.to_vec2::<f64>().unwrap(), mu.to_vec2::<f64>().unwrap());
        let s = reparameterize(&vec_t(&[0.0, 0.0]), &vec_t(&[0.0, 0.0]), &vec_t(&[0.4, -1.2])).unwrap();
        assert_eq!(s.to_vec2::<f64>().unwrap(), vec![vec![0.4, -1.2]]);
        // huge logvar is clamped rather than overflowing
        let s = reparameterize(&vec_t(&[0.0]), &vec_t(&[1e6]), &vec_t(&[1.0])).unwrap();
        assert!((s.to_vec2::<f64>().unwrap()[0][0] - 5f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_moments() {
        let n = 100_000;
        let mut rng = seeded(7);
        let noise: Vec<f64> = (0..2 * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let noise = Tensor::from_vec(noise, (n, 2), &Device::Cpu).unwrap();
        let mu = Tensor::from_slice(&[1.0f64, 2.0], (1, 2), &Device::Cpu).unwrap().broadcast_as((n, 2)).unwrap();
        let lv = Tensor::full(0.25f64.ln(), (n, 2), &Device::Cpu).unwrap();
        let s = reparameterize(&mu, &lv, &noise).unwrap().to_vec2::<f64>().unwrap();
        for (d, want) in [(0, 1.0), (1, 2.0)] {
            let mean = s.iter().map(|r| r[d]).sum::<f64>() / n as f64;
            let var = s.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - want).abs() < 0.01, "mean {mean}");
            assert!((var - 0.25).abs() < 0.02, "var {var}");
        }
    }

    proptest! {
        #[test]
        fn reparameterize_is_affine_in_noise(
            mu in prop::collection::vec(-3f64..3.0, 3),
            lv in prop::collection::vec(-4f64..4.0, 3),
            n1 in prop::collection::vec(-3f64..3.0, 3),
            n2 in prop::collection::vec(-3f64..3.0, 3),
            a in -2f64..2.0,
            b in -2f64..2.0,
        ) {
            let f = |n: &[f64]| reparameterize(&vec_t(&mu), &vec_t(&lv), &vec_t(n)).unwrap().to_vec2::<f64>().unwrap()[0].clone();
            let mixed: Vec<f64> = n1.iter().zip(&n2).map(|(x, y)| a * x + b * y).collect();
            let lhs = f(&mixed);
            let (s1, s2) = (f(&n1), f(&n2));
            for i in 0..3 {
                let rhs = mu[i] + a * (s1[i] - mu[i]) + b * (s2[i] - mu[i]);
                prop_assert!((lhs[i] - rhs).abs() < 1e-9);
            }
        }

        #[test]
        fn kl_is_nonnegative(mu in prop::collection::vec(-3f64..3.0, 4), lv in prop::collection::vec(-4f64..4.0, 4)) {
            let kl = scalar(&kl_divergence(&vec_t(&mu), &vec_t(&lv)).unwrap()).unwrap();
            prop_assert!(kl >= -1e-12);
        }

        #[test]
        fn missing_slots_never_matter(slot in 0usize..16, occ in 0f32..1.0) {
            let (_, b) = bank(DType::F32);
            let mut a = FrameLabels::MISSING;
            a.occurrence = occ;
            a.categorical[0] = 1;
            let mut c = a;
            c.categorical[slot] = if slot == 0 { 1 } else { MISSING };
            prop_assert_eq!(embed_labels(&a, &b).unwrap(), embed_labels(&c, &b).unwrap());
        }
    }

    #[test]
    fn kl_zero_only_at_standard_normal() {
        assert_eq!(scalar(&kl_divergence(&vec_t(&[0.0, 0.0]), &vec_t(&[0.0, 0.0])).unwrap()).unwrap(), 0.0);
        assert!(scalar(&kl_divergence(&vec_t(&[0.1, 0.0]), &vec_t(&[0.0, 0.0])).unwrap()).unwrap() > 0.0);
    }

    #[test]
    fn condition_modes() {
        let schema = FeatureSchema::default();
        let mut store = ParamStore::new(DType::F32);
        let c = Conditioner::new(&mut store, "c", &schema, &ConditioningConfig::default(), &mut seeded(1)).unwrap();
        let mut labels = FrameLabels::MISSING;
        labels.categorical[7] = 2;
        let input = LabelInput::from_frames(&[labels, FrameLabels::MISSING], &schema.vocab_sizes()).unwrap();
        let a = c.condition(&input, LatentMode::Deterministic, &mut seeded(1)).unwrap();
        let b = c.condition(&input, LatentMode::Deterministic, &mut seeded(2)).unwrap();
        assert_eq!(to_f32_vec(&a.sample).unwrap(), to_f32_vec(&b.sample).unwrap());
        assert_eq!(to_f32_vec(&a.sample).unwrap(), to_f32_vec(&a.mu).unwrap());
        let s1 = c.condition(&input, LatentMode::Sample, &mut seeded(3)).unwrap();
        let s2 = c.condition(&input, LatentMode::Sample, &mut seeded(3)).unwrap();
        assert_eq!(to_f32_vec(&s1.sample).unwrap(), to_f32_vec(&s2.sample).unwrap());
        assert_ne!(to_f32_vec(&s1.sample).unwrap(), to_f32_vec(&a.sample).unwrap());
        assert_eq!(a.sample.dims(), &[2, 32]);
    }

    #[test]
    fn sample_gradients() {
        let schema = FeatureSchema::default();
        let mut store = ParamStore::new(DType::F64);
        let c = Conditioner::new(&mut store, "c", &schema, &ConditioningConfig::default(), &mut seeded(5)).unwrap();
        let mut labels = FrameLabels::MISSING;
        labels.categorical[2] = 3;
        labels.occurrence = 0.4;
        let input = LabelInput::from_frames(&[labels], &schema.vocab_sizes()).unwrap();
        let mut noise_rng = seeded(9);
        let noise: Vec<f64> = (0..32).map(|_| noise_rng.sample::<f64, _>(StandardNormal)).collect();
        let noise = Tensor::from_vec(noise, (1, 32), &Device::Cpu).unwrap();
        let weights: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let weights = Tensor::from_vec(weights, (1, 32), &Device::Cpu).unwrap();
        let loss_of = || -> (Tensor, Tensor) {
            let lat = c.condition(&input, LatentMode::Deterministic, &mut seeded(0)).unwrap();
            let s = reparameterize(&lat.mu, &lat.logvar, &noise).unwrap();
            (s.mul(&weights).unwrap().sum_all().unwrap(), lat.mu)
        };

        // d sample / d mu is the identity
        let mu = candle_core::Var::from_tensor(&vec_t(&[0.2, -0.4])).unwrap();
        let lv = vec_t(&[0.1, 0.3]);
        let s = reparameterize(mu.as_tensor(), &lv, &vec_t(&[0.5, 0.7])).unwrap();
        for i in 0..2 {
            let g = s.narrow(1, i, 1).unwrap().sum_all().unwrap().backward().unwrap();
            let gm = g.get(mu.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
            assert_eq!(gm[0], if i == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        }

        // gradient w.r.t. the used embedding row
        let (loss, _) = loss_of();
        let grads = loss.backward().unwrap();
        let var = store.get("c.embed.slot02").unwrap().clone();
        let g = grads.get(var.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
        let base = var.as_tensor().to_vec2::<f64>().unwrap();
        for col in 0..8 {
            let eps = 1e-6;
            let eval = |d: f64| {
                let mut v = base.clone();
                v[3][col] += d;
                var.set(&Tensor::from_vec(v.concat(), var.dims(), &Device::Cpu).unwrap()).unwrap();
                let l = scalar(&loss_of().0).unwrap();
                var.set(&Tensor::from_vec(base.concat(), var.dims(), &Device::Cpu).unwrap()).unwrap();
                l
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let rel = (fd - g[3][col]).abs() / fd.abs().max(g[3][col].abs()).max(1e-8);
            assert!(rel < 1e-4, "col {col}: fd {fd} analytic {}", g[3][col]);
            // rows of unused values get no gradient
            assert_eq!(g[0][col], 0.0);
        }
    }
}
