//! Motion autoencoder whose bottleneck is the latent space of the distribution metrics.

use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Tensor};
use ndarray::s;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::config_hash;
use crate::motion::{PoseSequence, Skeleton};
use crate::nn::{seeded, tensor_from, to_f32_vec, Linear, Optimizer, ParamStore};

pub const EMBED_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub window: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Frame step between training windows.
    pub stride: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            window: 30,
            latent_dim: 32,
            hidden: 128,
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 32,
            stride: 15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedManifest {
    pub schema_version: u32,
    pub config: EmbedConfig,
    pub joint_count: usize,
    /// Coordinates are `(x - rest) / scale` before the network sees them.
    pub scale: f64,
    pub training_config_hash: String,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingNet {
    cfg: EmbedConfig,
    rest: Vec<f32>,
    scale: f64,
    store: ParamStore,
    enc: [Linear; 2],
    dec: [Linear; 2],
}

impl EmbeddingNet {
    fn build(cfg: EmbedConfig, skeleton: &Skeleton, scale: f64) -> Result<Self> {
        if cfg.window == 0 || cfg.latent_dim == 0 || cfg.hidden == 0 {
            return Err(Error::invalid("embedding window, latent_dim and hidden must be positive"));
        }
        let input = cfg.window * skeleton.joint_count() * 3;
        let mut store = ParamStore::new(DType::F32);
        let mut rng = seeded(cfg.seed);
        let enc = [
            Linear::new(&mut store, "embed.enc0", input, cfg.hidden, &mut rng)?,
            Linear::new(&mut store, "embed.enc1", cfg.hidden, cfg.latent_dim, &mut rng)?,
        ];
        let dec = [
            Linear::new(&mut store, "embed.dec0", cfg.latent_dim, cfg.hidden, &mut rng)?,
            Linear::new(&mut store, "embed.dec1", cfg.hidden, input, &mut rng)?,
        ];
        let rest = skeleton.rest_pose().iter().flatten().copied().collect();
        Ok(EmbeddingNet { cfg, rest, scale, store, enc, dec })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    fn encode_t(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.enc[1].forward(&self.enc[0].forward(x)?.tanh()?)?.tanh()?)
    }

    fn decode_t(&self, z: &Tensor) -> Result<Tensor> {
        self.dec[1].forward(&self.dec[0].forward(z)?.tanh()?)
    }

    fn flat_window(&self, seq: &PoseSequence, start: usize) -> Vec<f32> {
        let w = seq.frames().slice(s![start..start + self.cfg.window, .., ..]);
        let jn = self.rest.len();
        w.iter()
            .enumerate()
            .map(|(i, &x)| ((x - self.rest[i % jn]) as f64 / self.scale) as f32)
            .collect()
    }

    fn batch(&self, rows: &[Vec<f32>]) -> Result<Tensor> {
        let width = rows[0].len();
        tensor_from(rows.concat(), &[rows.len(), width], DType::F32)
    }

    /// Latents of consecutive non-overlapping windows; trailing frames that do not fill a window
    /// are dropped.
    pub fn embed_windows(&self, seq: &PoseSequence) -> Result<Vec<Vec<f64>>> {
        if seq.joint_count() * 3 != self.rest.len() {
            return Err(Error::invalid(format!(
                "embedding net expects {} joints, sequence has {}",
                self.rest.len() / 3,
                seq.joint_count()
            )));
        }
        let n = seq.frame_count() / self.cfg.window;
        if n == 0 {
            return Ok(Vec::new());
        }
        let rows: Vec<Vec<f32>> = (0..n).map(|i| self.flat_window(seq, i * self.cfg.window)).collect();
        let z = to_f32_vec(&self.encode_t(&self.batch(&rows)?)?)?;
        Ok(z.chunks(self.cfg.latent_dim).map(|c| c.iter().map(|&v| v as f64).collect()).collect())
    }

    pub fn embed_set(&self, seqs: &[&PoseSequence]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for s in seqs {
            out.extend(self.embed_windows(s)?);
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over overlapping windows of `seqs`.
    pub fn reconstruction_error(&self, seqs: &[&PoseSequence]) -> Result<f64> {
        let rows = self.windows(seqs, self.cfg.stride.max(1));
        if rows.is_empty() {
            return Err(Error::invalid("no complete window to reconstruct"));
        }
        let x = self.batch(&rows)?;
        crate::nn::scalar(&(self.decode_t(&self.encode_t(&x)?)? - &x)?.sqr()?.mean_all()?)
    }

    fn windows(&self, seqs: &[&PoseSequence], stride: usize) -> Vec<Vec<f32>> {
        let mut rows = Vec::new();
        for s in seqs {
            let mut start = 0;
            while start + self.cfg.window <= s.frame_count() {
                rows.push(self.flat_window(s, start));
                start += stride;
            }
        }
        rows
    }

    /// Trains the autoencoder on windows cut every `stride` frames from `seqs`.
    pub fn train(seqs: &[&PoseSequence], cfg: &EmbedConfig) -> Result<(Self, EmbedManifest)> {
        let Some(first) = seqs.first() else {
            return Err(Error::invalid("embedding net needs a non-empty training set"));
        };
        let skeleton: Arc<Skeleton> = first.skeleton().clone();
        let rest: Vec<f32> = skeleton.rest_pose().iter().flatten().copied().collect();
        let (mut sq, mut count) = (0.0f64, 0usize);
        for s in seqs {
            if s.joint_count() != skeleton.joint_count() {
                return Err(Error::invalid("training sequences use different skeletons"));
            }
            for (i, &x) in s.frames().iter().enumerate() {
                let d = (x - rest[i % rest.len()]) as f64;
                sq += d * d;
                count += 1;
            }
        }
        let scale = if count > 0 && sq > 0.0 { (sq / count as f64).sqrt() } else { 1.0 };
        let net = EmbeddingNet::build(cfg.clone(), &skeleton, scale)?;
        let rows = net.windows(seqs, cfg.stride.max(1));
        if rows.is_empty() {
            return Err(Error::invalid(format!("no training sequence reaches {} frames", cfg.window)));
        }
        let mut opt = Optimizer::adam(net.store.vars(), cfg.learning_rate)?;
        let mut rng = seeded(cfg.seed ^ 0x9e37);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut trace = vec![net.loss_over(&rows)?];
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<Vec<f32>> = idx.iter().map(|&i| rows[i].clone()).collect();
                let x = net.batch(&batch)?;
                let loss = (net.decode_t(&net.encode_t(&x)?)? - &x)?.sqr()?.mean_all()?;
                opt.backward_step(&loss)?;
            }
            trace.push(net.loss_over(&rows)?);
        }
        let manifest = EmbedManifest {
            schema_version: EMBED_SCHEMA_VERSION,
            config: cfg.clone(),
            joint_count: skeleton.joint_count(),
            scale,
            training_config_hash: config_hash(cfg),
            loss_trace: trace,
        };
        Ok((net, manifest))
    }

    fn loss_over(&self, rows: &[Vec<f32>]) -> Result<f64> {
        let mut total = 0.0;
        for c in rows.chunks(256) {
            let x = self.batch(c)?;
            total += crate::nn::scalar(&(self.decode_t(&self.encode_t(&x)?)? - &x)?.sqr()?.mean_all()?)? * c.len() as f64;
        }
        Ok(total / rows.len() as f64)
    }

    /// Writes `embed.safetensors`, `embed.json` and `skeleton.json` into `dir`.
    pub fn save(&self, dir: &Path, manifest: &EmbedManifest, skeleton: &Skeleton) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join("embed.safetensors"))?;
        let p = dir.join("embed.json");
        std::fs::write(&p, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&p, e))?;
        let sk = dir.join("skeleton.json");
        std::fs::write(&sk, serde_json::to_string_pretty(skeleton)?).map_err(|e| Error::io(&sk, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, EmbedManifest)> {
        let p = dir.join("embed.json");
        let text = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: EmbedManifest = serde_json::from_slice(&text)?;
        if manifest.schema_version != EMBED_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported embedding schema_version {}", manifest.schema_version)));
        }
        let sk = dir.join("skeleton.json");
        let text = std::fs::read(&sk).map_err(|e| Error::io(&sk, e))?;
        let skeleton: Skeleton = serde_json::from_slice(&text)?;
        if skeleton.joint_count() != manifest.joint_count {
            return Err(Error::Schema("embedding skeleton does not match its manifest".into()));
        }
        let net = EmbeddingNet::build(manifest.config.clone(), &skeleton, manifest.scale)?;
        net.store.load(&dir.join("embed.safetensors"))?;
        Ok((net, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth::{synth_corpus, CorpusSpec};

    fn corpus() -> Vec<PoseSequence> {
        let spec = CorpusSpec { sequence_count: 6, ..CorpusSpec::default() };
        synth_corpus(&spec, 4).unwrap().samples.into_iter().map(|s| s.motion).collect()
    }

    fn small() -> EmbedConfig {
        EmbedConfig { epochs: 8, hidden: 64, ..EmbedConfig::default() }
    }

    #[test]
    fn trains_deterministically() {
        let seqs = corpus();
        let refs: Vec<&PoseSequence> = seqs.iter().collect();
        let (a, ma) = EmbeddingNet::train(&refs, &small()).unwrap();
        let (b, _) = EmbeddingNet::train(&refs, &small()).unwrap();
        assert!(ma.loss_trace.last().unwrap() < &ma.loss_trace[0]);
        let za = a.embed_windows(&seqs[0]).unwrap();
        assert_eq!(za, b.embed_windows(&seqs[0]).unwrap());
        assert_eq!(za.len(), seqs[0].frame_count() / 30);
        assert!(za.iter().all(|z| z.len() == 32));
        assert_eq!(za, a.embed_windows(&seqs[0]).unwrap());
    }

    #[test]
    fn empty_and_save_load() {
        assert!(EmbeddingNet::train(&[], &small()).is_err());
        let seqs = corpus();
        let refs: Vec<&PoseSequence> = seqs.iter().collect();
        let cfg = EmbedConfig { epochs: 1, ..small() };
        let (net, m) = EmbeddingNet::train(&refs, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path(), &m, seqs[0].skeleton()).unwrap();
        let (back, m2) = EmbeddingNet::load(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(net.embed_windows(&seqs[1]).unwrap(), back.embed_windows(&seqs[1]).unwrap());
        let short = seqs[0].slice(0, 29).unwrap();
        assert!(net.embed_windows(&short).unwrap().is_empty());
    }
}
