use std::sync::Arc;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CodecConfig, CodecManifest, FinalLosses, MotionCodec, CODEC_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::motion::{PoseSequence, Skeleton};
use crate::nn::{scalar, seeded, Optimizer, ParamStore};
use crate::training::{wgan_div_losses, Critic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecEpoch {
    pub epoch: usize,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub adversarial: f64,
    /// Codes chosen at least once during the epoch.
    pub used_codes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainReport {
    /// Reconstruction error of the freshly initialized codec over the training windows.
    pub initial_reconstruction: f64,
    pub epochs: Vec<CodecEpoch>,
    /// Fraction of codes used at least once over all training windows after training.
    pub utilization: f64,
}

impl CodecTrainReport {
    pub fn final_reconstruction(&self) -> f64 {
        self.epochs.last().map_or(self.initial_reconstruction, |e| e.reconstruction)
    }
}

/// Normalized training windows `(B, W, J * 3)`: every full window at `stride`, plus the
/// front-padded prefix windows at the start of each sequence.
pub fn window_dataset(seqs: &[&PoseSequence], codec: &MotionCodec, stride: usize) -> Result<Tensor> {
    let w = codec.window_length();
    let mut windows = Vec::new();
    for seq in seqs {
        let n = seq.frame_count();
        let frames = seq.frames();
        for end in 1..w.min(n + 1) {
            windows.push(codec.window_tensor(frames.slice(ndarray::s![0..end, .., ..]))?);
        }
        let mut start = 0;
        while start + w <= n {
            windows.push(codec.window_tensor(frames.slice(ndarray::s![start..start + w, .., ..]))?);
            start += stride;
        }
    }
    if windows.is_empty() {
        return Err(Error::invalid("dataset has no frames"));
    }
    Ok(Tensor::cat(&windows, 0)?)
}

fn full_window_count(seqs: &[&PoseSequence], w: usize) -> usize {
    seqs.iter().map(|s| s.frame_count().saturating_sub(w - 1)).sum()
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

struct BatchLoss {
    total: Tensor,
    reconstruction: f64,
    codebook: f64,
    commitment: f64,
    ids: Vec<u32>,
    recon: Tensor,
}

fn batch_loss(codec: &MotionCodec, x: &Tensor) -> Result<BatchLoss> {
    let cfg = codec.config();
    let z = codec.encode_latent(x)?;
    let ids = codec.quantize_ids(&z)?;
    let zq = codec.lookup(&ids)?;
    // straight-through: forward uses zq, gradient flows to z unchanged
    let z_st = (&z + (&zq - &z)?.detach())?;
    let recon = codec.decode_latent(&z_st)?;
    let rec = mse(&recon, x)?;
    let cb = mse(&zq, &z.detach())?;
    let commit = mse(&z, &zq.detach())?;
    let total = ((&rec + &cb)? + (commit.clone() * cfg.beta)?)?;
    Ok(BatchLoss {
        reconstruction: scalar(&rec)?,
        codebook: scalar(&cb)?,
        commitment: scalar(&commit)?,
        total,
        ids,
        recon,
    })
}

/// Sets codebook rows to encoder outputs of randomly chosen windows (plus a tiny jitter so rows
/// never coincide).
fn reseed_codes(codec: &MotionCodec, windows: &Tensor, rows: &[usize], rng: &mut impl Rng) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let b = windows.dims()[0];
    let picks: Vec<u32> = rows.iter().map(|_| rng.gen_range(0..b) as u32).collect();
    let idx = Tensor::from_slice(&picks, picks.len(), &Device::Cpu)?;
    let z = codec.encode_latent(&windows.index_select(&idx, 0)?)?.detach();
    let d = codec.config().d;
    let z = crate::nn::to_f32_vec(&z)?;
    let mut book = crate::nn::to_f32_vec(codec.codebook_tensor())?;
    for (i, &row) in rows.iter().enumerate() {
        // first code of the chosen window
        for c in 0..d {
            let jitter: f32 = rng.gen_range(-1e-3..1e-3);
            book[row * d + c] = z[i * codec.latent_dim() + c] + jitter;
        }
    }
    let var = codec.store().get("codec.codebook").expect("codebook parameter");
    let t = Tensor::from_vec(book, var.dims(), &Device::Cpu)?.to_dtype(codec.dtype())?;
    var.set(&t)?;
    Ok(())
}

/// Trains a codec on every window of `dataset`. The optional adversarial term pits a critic
/// against the reconstructions with the WGAN-div losses.
pub fn train_codec(
    dataset: &[&PoseSequence],
    skeleton: Arc<Skeleton>,
    cfg: &CodecConfig,
) -> Result<(MotionCodec, CodecTrainReport, CodecManifest)> {
    cfg.validate()?;
    if full_window_count(dataset, cfg.window_length) == 0 {
        return Err(Error::invalid(format!(
            "dataset has no sequence of at least {} frames",
            cfg.window_length
        )));
    }
    let codec = MotionCodec::new(cfg.clone(), skeleton, candle_core::DType::F32)?;
    let windows = window_dataset(dataset, &codec, cfg.stride)?;
    let total = windows.dims()[0];
    let mut rng = seeded(cfg.seed ^ 0x5eed_c0dec);

    let all: Vec<usize> = (0..cfg.k).collect();
    reseed_codes(&codec, &windows, &all, &mut rng)?;
    let initial_reconstruction = codec.reconstruction_error(&windows)?;

    let mut opt = Optimizer::adam(codec.store().vars(), cfg.learning_rate)?.with_clip(5.0);
    let adversarial = if cfg.adversarial_weight > 0.0 {
        let mut store = ParamStore::new(codec.dtype());
        let critic = Critic::new(&mut store, "codec_critic", cfg.window_length * codec.feature_dim(), 64, &mut rng)?;
        let opt = Optimizer::adam(store.vars(), cfg.learning_rate)?;
        Some((critic, opt, store))
    } else {
        None
    };
    let mut adversarial = adversarial;

    let mut order: Vec<u32> = (0..total as u32).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut used = vec![false; cfg.k];
        let (mut rec, mut cb, mut com, mut adv, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let idx = Tensor::from_slice(chunk, chunk.len(), &Device::Cpu)?;
            let x = windows.index_select(&idx, 0)?;
            let loss = batch_loss(&codec, &x)?;
            for &id in &loss.ids {
                used[id as usize] = true;
            }
            let mut total_loss = loss.total.clone();
            if let Some((critic, critic_opt, _)) = adversarial.as_mut() {
                let b = chunk.len();
                let real = x.flatten_from(1)?;
                let fake = loss.recon.flatten_from(1)?;
                let eps = crate::nn::tensor_from((0..b).map(|_| rng.gen::<f32>()).collect(), &[b, 1], codec.dtype())?;
                let mix = (real.broadcast_mul(&eps)? + fake.detach().broadcast_mul(&eps.affine(-1.0, 1.0)?)?)?;
                let (d_loss, _) = wgan_div_losses(
                    &critic.score(&real)?,
                    &critic.score(&fake.detach())?,
                    &critic.input_grad_norm(&mix)?,
                    2.0,
                    6.0,
                )?;
                critic_opt.backward_step(&d_loss)?;
                let g_loss = critic.score(&fake)?.mean_all()?.neg()?;
                adv += scalar(&g_loss)?;
                total_loss = (total_loss + (g_loss * cfg.adversarial_weight)?)?;
            }
            opt.backward_step(&total_loss)?;
            rec += loss.reconstruction;
            cb += loss.codebook;
            com += loss.commitment;
            batches += 1;
        }
        let dead: Vec<usize> = (0..cfg.k).filter(|&i| !used[i]).collect();
        let used_codes = cfg.k - dead.len();
        if epoch + 1 < cfg.epochs {
            reseed_codes(&codec, &windows, &dead, &mut rng)?;
        }
        let n = batches.max(1) as f64;
        log::debug!("codec epoch {epoch}: rec {:.5} used {used_codes}", rec / n);
        epochs.push(CodecEpoch {
            epoch,
            reconstruction: rec / n,
            codebook: cb / n,
            commitment: com / n,
            adversarial: adv / n,
            used_codes,
        });
    }

    let ids = codec.quantize_ids(&codec.encode_latent(&windows)?)?;
    let mut used = vec![false; cfg.k];
    for id in ids {
        used[id as usize] = true;
    }
    let utilization = used.iter().filter(|&&u| u).count() as f64 / cfg.k as f64;
    let last = epochs.last();
    let manifest = CodecManifest {
        schema_version: CODEC_SCHEMA_VERSION,
        k: cfg.k,
        d: cfg.d,
        window_length: cfg.window_length,
        training_config_hash: crate::manifest::config_hash(cfg),
        final_losses: FinalLosses {
            reconstruction: last.map_or(initial_reconstruction, |e| e.reconstruction),
            codebook: last.map_or(0.0, |e| e.codebook),
            commitment: last.map_or(0.0, |e| e.commitment),
        },
        optimizer: format!("adam(lr={}, clip=5)", cfg.learning_rate),
        config: cfg.clone(),
    };
    Ok((
        codec,
        CodecTrainReport {
            initial_reconstruction,
            epochs,
            utilization,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth::{synth_corpus, CorpusSpec};

    fn tiny_cfg() -> CodecConfig {
        CodecConfig {
            k: 16,
            d: 8,
            hidden: 32,
            epochs: 4,
            stride: 4,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn too_short_dataset_rejected() {
        let sk = Arc::new(Skeleton::upper_body());
        let seq = PoseSequence::rest(sk.clone(), 15.0, 3).unwrap();
        assert!(matches!(train_codec(&[&seq], sk, &tiny_cfg()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = synth_corpus(&CorpusSpec { sequence_count: 6, ..CorpusSpec::default() }, 0).unwrap();
        let seqs: Vec<&PoseSequence> = data.samples.iter().map(|s| &s.motion).collect();
        let sk = seqs[0].skeleton().clone();
        let (a, ra, ma) = train_codec(&seqs, sk.clone(), &tiny_cfg()).unwrap();
        let (b, rb, _) = train_codec(&seqs, sk, &tiny_cfg()).unwrap();
        assert_eq!(ra, rb);
        assert!(a.store().same_values(&b.store().snapshot().unwrap()).unwrap());
        assert!(ra.final_reconstruction() < ra.initial_reconstruction);
        assert_eq!(ma.k, 16);
        assert!(a.codebook().unwrap().duplicates().is_empty());
    }

    #[test]
    fn adversarial_term_runs() {
        let data = synth_corpus(&CorpusSpec { sequence_count: 2, ..CorpusSpec::default() }, 0).unwrap();
        let seqs: Vec<&PoseSequence> = data.samples.iter().map(|s| &s.motion).collect();
        let cfg = CodecConfig {
            adversarial_weight: 0.1,
            epochs: 1,
            ..tiny_cfg()
        };
        let (_, report, _) = train_codec(&seqs, seqs[0].skeleton().clone(), &cfg).unwrap();
        assert!(report.epochs[0].adversarial.is_finite());
    }
}
