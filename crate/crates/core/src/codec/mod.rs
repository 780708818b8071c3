//! Vector-quantized motion codec over short pose windows.
//!
//! A window of up to four frames is encoded by a GRU into `codes_per_window` latents of size `D`,
//! each snapped to its nearest codebook row. The decoder turns (quantized or continuous) latents
//! back into a full window.

mod train;

use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use ndarray::{ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{PoseSequence, Skeleton};
use crate::nn::{seeded, Gru, Linear, ParamStore};

pub use train::{train_codec, window_dataset, CodecTrainReport};

pub const CODEC_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Codebook size.
    pub k: usize,
    /// Code dimension.
    pub d: usize,
    pub codes_per_window: usize,
    pub window_length: usize,
    pub hidden: usize,
    /// Multiplier applied to rest-relative meters before the network sees them.
    pub coord_scale: f64,
    /// Commitment weight.
    pub beta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Step between consecutive training windows.
    pub stride: usize,
    /// Weight of the optional adversarial term; 0 disables it.
    pub adversarial_weight: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            k: 64,
            d: 32,
            codes_per_window: 1,
            window_length: 4,
            hidden: 64,
            coord_scale: 10.0,
            beta: 0.25,
            epochs: 30,
            learning_rate: 2e-3,
            batch_size: 64,
            stride: 2,
            adversarial_weight: 0.0,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("codebook needs K >= 2, got {}", self.k)));
        }
        if self.d == 0 || self.codes_per_window == 0 || self.window_length == 0 || self.hidden == 0 {
            return Err(Error::invalid("codec dimensions must be positive"));
        }
        if self.batch_size == 0 || self.stride == 0 {
            return Err(Error::invalid("batch size and stride must be positive"));
        }
        if !(self.coord_scale > 0.0) || self.beta < 0.0 || self.adversarial_weight < 0.0 {
            return Err(Error::invalid("coord_scale must be positive and weights nonnegative"));
        }
        Ok(())
    }
}

/// `K x D` code vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    d: usize,
    vectors: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, d: usize, vectors: Vec<f32>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("codebook needs K >= 2, got {k}")));
        }
        if vectors.len() != k * d {
            return Err(Error::invalid(format!("codebook data has {} values, want {}", vectors.len(), k * d)));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook contains non-finite values"));
        }
        Ok(Codebook { k, d, vectors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.vectors[id * self.d..(id + 1) * self.d]
    }

    /// Indices of rows that exactly repeat an earlier row.
    pub fn duplicates(&self) -> Vec<usize> {
        (1..self.k).filter(|&i| (0..i).any(|j| self.row(i) == self.row(j))).collect()
    }
}

/// Nearest codebook row under Euclidean distance; ties go to the lowest index.
pub fn quantize(latent: &[f32], codebook: &Codebook) -> Result<(usize, Vec<f32>)> {
    if latent.len() != codebook.d {
        return Err(Error::invalid(format!("latent has {} values, codebook D is {}", latent.len(), codebook.d)));
    }
    if let Some(i) = latent.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite latent at component {i}")));
    }
    let mut best = (0, f64::INFINITY);
    for id in 0..codebook.k {
        let dist: f64 = latent
            .iter()
            .zip(codebook.row(id))
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        if dist < best.1 {
            best = (id, dist);
        }
    }
    Ok((best.0, codebook.row(best.0).to_vec()))
}

/// Codebook IDs of one window (`codes_per_window` of them).
pub type CodeSequence = Vec<u32>;

#[derive(Debug, Clone)]
pub struct MotionCodec {
    cfg: CodecConfig,
    skeleton: Arc<Skeleton>,
    store: ParamStore,
    enc_gru: Gru,
    enc_out: Linear,
    dec_init: Linear,
    dec_gru: Gru,
    dec_out: Linear,
    codebook: Tensor,
    /// Rest pose flattened to `J * 3`.
    rest: Tensor,
}

impl MotionCodec {
    /// Freshly initialized codec from `cfg.seed`.
    pub fn new(cfg: CodecConfig, skeleton: Arc<Skeleton>, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed);
        let mut store = ParamStore::new(dtype);
        let f = skeleton.joint_count() * 3;
        let (h, cd, w) = (cfg.hidden, cfg.codes_per_window * cfg.d, cfg.window_length);
        let enc_gru = Gru::new(&mut store, "codec.enc.gru", f, h, &mut rng)?;
        let enc_out = Linear::new(&mut store, "codec.enc.out", h, cd, &mut rng)?;
        let dec_init = Linear::new(&mut store, "codec.dec.init", cd, h, &mut rng)?;
        let dec_gru = Gru::new(&mut store, "codec.dec.gru", cd + w, h, &mut rng)?;
        let dec_out = Linear::new(&mut store, "codec.dec.out", h, f, &mut rng)?;
        let codebook = store.normal("codec.codebook", &[cfg.k, cfg.d], 1.0, &mut rng)?;
        let rest: Vec<f32> = skeleton.rest_pose().iter().flatten().copied().collect();
        let rest = Tensor::from_vec(rest, f, &Device::Cpu)?.to_dtype(dtype)?;
        Ok(MotionCodec {
            cfg,
            skeleton,
            store,
            enc_gru,
            enc_out,
            dec_init,
            dec_gru,
            dec_out,
            codebook,
            rest,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn window_length(&self) -> usize {
        self.cfg.window_length
    }

    /// Width of the latent of one window, `codes_per_window * D`.
    pub fn latent_dim(&self) -> usize {
        self.cfg.codes_per_window * self.cfg.d
    }

    pub fn feature_dim(&self) -> usize {
        self.skeleton.joint_count() * 3
    }

    pub(crate) fn codebook_tensor(&self) -> &Tensor {
        &self.codebook
    }

    pub fn codebook(&self) -> Result<Codebook> {
        let v = crate::nn::to_f32_vec(&self.codebook)?;
        Codebook::new(self.cfg.k, self.cfg.d, v)
    }

    /// Poses `(..., J * 3)` in meters -> network coordinates.
    pub fn normalize(&self, poses: &Tensor) -> Result<Tensor> {
        Ok((poses.broadcast_sub(&self.rest)? * self.cfg.coord_scale)?)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x / self.cfg.coord_scale)?.broadcast_add(&self.rest)?)
    }

    /// Frames `(n, J, 3)` with `1 <= n <= W`, front-padded by repeating the first frame, as a
    /// normalized `(1, W, J * 3)` tensor.
    pub fn window_tensor(&self, frames: ArrayView3<f32>) -> Result<Tensor> {
        let (n, j, _) = frames.dim();
        let w = self.cfg.window_length;
        if n == 0 {
            return Err(Error::invalid("empty window"));
        }
        if n > w {
            return Err(Error::invalid(format!("window has {n} frames, codec takes at most {w}")));
        }
        if j != self.skeleton.joint_count() {
            return Err(Error::invalid(format!(
                "window has {j} joints, codec skeleton has {}",
                self.skeleton.joint_count()
            )));
        }
        let mut data = Vec::with_capacity(w * j * 3);
        for i in 0..w {
            let src = i.saturating_sub(w - n);
            data.extend(frames.index_axis(Axis(0), src).iter().copied());
        }
        let t = Tensor::from_vec(data, (1, w, j * 3), &Device::Cpu)?.to_dtype(self.dtype())?;
        self.normalize(&t)
    }

    /// Continuous encoder output `(B, codes_per_window * D)` for normalized windows `(B, W, J * 3)`.
    pub fn encode_latent(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h) = self.enc_gru.forward(x, None)?;
        self.enc_out.forward(&h)
    }

    /// Nearest-code IDs for a batch of latents `(B, C * D)`, row-major `B * C`.
    pub fn quantize_ids(&self, latent: &Tensor) -> Result<Vec<u32>> {
        let cb = self.codebook()?;
        let flat = crate::nn::to_f32_vec(latent)?;
        flat.chunks(self.cfg.d)
            .map(|z| quantize(z, &cb).map(|(id, _)| id as u32))
            .collect()
    }

    /// Codebook rows for IDs, shaped `(B, C * D)`.
    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        let c = self.cfg.codes_per_window;
        if ids.len() % c != 0 {
            return Err(Error::invalid("ID count is not a multiple of codes_per_window"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.cfg.k) {
            return Err(Error::invalid(format!("code ID {bad} outside [0, {})", self.cfg.k)));
        }
        let idx = Tensor::from_slice(ids, ids.len(), &Device::Cpu)?;
        Ok(self.codebook.index_select(&idx, 0)?.reshape((ids.len() / c, c * self.cfg.d))?)
    }

    /// Latents `(B, C * D)` -> normalized windows `(B, W, J * 3)`. Differentiable.
    pub fn decode_latent(&self, z: &Tensor) -> Result<Tensor> {
        let (b, _) = z.dims2()?;
        let w = self.cfg.window_length;
        let h0 = self.dec_init.forward(z)?.tanh()?;
        let steps = Tensor::eye(w, self.dtype(), &Device::Cpu)?.unsqueeze(0)?.broadcast_as((b, w, w))?;
        let zs = z.unsqueeze(1)?.broadcast_as((b, w, z.dims()[1]))?;
        let input = Tensor::cat(&[&zs, &steps], 2)?;
        let (out, _) = self.dec_gru.forward(&input, Some(&h0))?;
        self.dec_out.forward(&out)
    }

    /// IDs of one window of up to W frames.
    pub fn encode(&self, frames: ArrayView3<f32>) -> Result<CodeSequence> {
        let x = self.window_tensor(frames)?;
        self.quantize_ids(&self.encode_latent(&x)?)
    }

    /// Window of W frames in meters, `(W, J, 3)`.
    pub fn decode(&self, codes: &[u32]) -> Result<ndarray::Array3<f32>> {
        if codes.len() != self.cfg.codes_per_window {
            return Err(Error::invalid(format!(
                "decode takes {} codes, got {}",
                self.cfg.codes_per_window,
                codes.len()
            )));
        }
        let x = self.denormalize(&self.decode_latent(&self.lookup(codes)?)?)?;
        let data = crate::nn::to_f32_vec(&x)?;
        Ok(ndarray::Array3::from_shape_vec((self.cfg.window_length, self.skeleton.joint_count(), 3), data)
            .expect("decoder output shape"))
    }

    /// ID stream for every frame of a sequence: frame i is coded from the window ending at i
    /// (front-padded at the start).
    pub fn encode_prefix_windows(&self, seq: &PoseSequence) -> Result<Vec<CodeSequence>> {
        self.encode_prefixes(seq.frames().view())
    }

    pub fn encode_prefixes(&self, frames: ArrayView3<f32>) -> Result<Vec<CodeSequence>> {
        let n = frames.dim().0;
        let w = self.cfg.window_length;
        let mut batch = Vec::with_capacity(n);
        for i in 0..n {
            let lo = (i + 1).saturating_sub(w);
            batch.push(self.window_tensor(frames.slice(ndarray::s![lo..=i, .., ..]))?);
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::cat(&batch, 0)?;
        let ids = self.quantize_ids(&self.encode_latent(&x)?)?;
        Ok(ids.chunks(self.cfg.codes_per_window).map(<[u32]>::to_vec).collect())
    }

    /// Mean squared reconstruction error in network coordinates over windows `(B, W, J * 3)`.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64> {
        let z = self.encode_latent(x)?;
        let zq = self.lookup(&self.quantize_ids(&z)?)?;
        let rec = self.decode_latent(&zq)?;
        crate::nn::scalar(&(rec - x)?.sqr()?.mean_all()?)
    }

    pub fn save(&self, dir: &Path, manifest: &CodecManifest) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join("codec.safetensors"))?;
        let path = dir.join("codec.json");
        std::fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))?;
        let sk = dir.join("skeleton.json");
        std::fs::write(&sk, serde_json::to_string_pretty(&*self.skeleton)?).map_err(|e| Error::io(&sk, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, CodecManifest)> {
        let path = dir.join("codec.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CodecManifest = serde_json::from_slice(&text)?;
        if manifest.schema_version != CODEC_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported codec schema_version {}", manifest.schema_version)));
        }
        let sk = dir.join("skeleton.json");
        let text = std::fs::read(&sk).map_err(|e| Error::io(&sk, e))?;
        let skeleton: Skeleton = serde_json::from_slice(&text)?;
        let codec = MotionCodec::new(manifest.config.clone(), Arc::new(skeleton), DType::F32)?;
        codec.store.load(&dir.join("codec.safetensors"))?;
        Ok((codec, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecManifest {
    pub schema_version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub window_length: usize,
    pub training_config_hash: String,
    pub final_losses: FinalLosses,
    pub optimizer: String,
    pub config: CodecConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
}
