//! Label predictor for chunk seeds: codec IDs of the seed frames -> embedding -> GRU -> one
//! softmax head per categorical slot.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::ArrayView3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::MotionCodec;
use crate::conditioning::LabelInput;
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureTimeline, CATEGORICAL_SLOTS, MISSING};
use crate::motion::PoseSequence;
use crate::nn::{log_softmax_last, scalar, seeded, softmax_last, to_f32_vec, Embedding, Gru, Linear, Optimizer, ParamStore};

pub const APN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApnConfig {
    /// Seed frames per prediction.
    pub seed_frames: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Frame step between training windows.
    pub stride: usize,
    pub seed: u64,
}

impl Default for ApnConfig {
    fn default() -> Self {
        ApnConfig {
            seed_frames: 4,
            embed_dim: 16,
            hidden: 64,
            epochs: 15,
            learning_rate: 3e-3,
            batch_size: 64,
            stride: 2,
            seed: 0,
        }
    }
}

/// Per seed frame, per categorical slot: a probability vector over that slot's vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ApnPrediction {
    pub frames: Vec<Vec<Vec<f32>>>,
}

impl ApnPrediction {
    pub fn argmax(&self, frame: usize, slot: usize) -> usize {
        let d = &self.frames[frame][slot];
        (0..d.len()).fold(0, |best, i| if d[i] > d[best] { i } else { best })
    }

    /// Label weights for the seed rows; occurrence comes from `occurrence` (the aPN does not
    /// predict it).
    pub fn to_label_input(&self, vocab_sizes: &[usize], occurrence: &[f32]) -> Result<LabelInput> {
        let mut input = LabelInput::missing(self.frames.len(), vocab_sizes);
        for (r, slots) in self.frames.iter().enumerate() {
            for (s, dist) in slots.iter().enumerate() {
                input.set_soft(r, s, dist)?;
            }
            input.set_occurrence(r, occurrence.get(r).copied().unwrap_or(0.0));
        }
        Ok(input)
    }
}

#[derive(Debug, Clone)]
pub struct ApnModel {
    cfg: ApnConfig,
    vocab_sizes: Vec<usize>,
    codes_per_window: usize,
    store: ParamStore,
    embed: Embedding,
    gru: Gru,
    heads: Vec<Linear>,
}

impl ApnModel {
    pub fn new(cfg: ApnConfig, schema: &FeatureSchema, codebook_size: usize, codes_per_window: usize) -> Result<Self> {
        if cfg.seed_frames == 0 || cfg.embed_dim == 0 || cfg.hidden == 0 || cfg.batch_size == 0 || cfg.stride == 0 {
            return Err(Error::invalid("aPN dimensions must be positive"));
        }
        let mut rng = seeded(cfg.seed);
        let mut store = ParamStore::new(DType::F32);
        let embed = Embedding::new(&mut store, "apn.ids", codebook_size, cfg.embed_dim, &mut rng)?;
        let gru = Gru::new(&mut store, "apn.gru", codes_per_window * cfg.embed_dim, cfg.hidden, &mut rng)?;
        let vocab_sizes = schema.vocab_sizes();
        let heads = vocab_sizes
            .iter()
            .enumerate()
            .map(|(s, &v)| Linear::new(&mut store, &format!("apn.head{s:02}"), cfg.hidden, v, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ApnModel {
            cfg,
            vocab_sizes,
            codes_per_window,
            store,
            embed,
            gru,
            heads,
        })
    }

    pub fn config(&self) -> &ApnConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    /// Per-slot logits `(B, M, V_s)` for IDs laid out `(B, M, C)` row-major.
    fn logits(&self, ids: &[u32], batch: usize) -> Result<Vec<Tensor>> {
        let m = self.cfg.seed_frames;
        let e = self.embed.lookup(ids)?.reshape((batch, m, self.codes_per_window * self.cfg.embed_dim))?;
        let (h, _) = self.gru.forward(&e, None)?;
        self.heads.iter().map(|head| head.forward(&h)).collect()
    }

    /// IDs for a seed window: frame `i` is coded from the seed frames up to `i`.
    fn seed_ids(&self, seed: ArrayView3<f32>, codec: &MotionCodec) -> Result<Vec<u32>> {
        let m = self.cfg.seed_frames;
        if seed.dim().0 != m {
            return Err(Error::invalid(format!("aPN takes exactly {m} seed frames, got {}", seed.dim().0)));
        }
        if codec.codebook_tensor().dims()[0] != self.embed.rows() || codec.config().codes_per_window != self.codes_per_window {
            return Err(Error::invalid("codec does not match the aPN's codebook"));
        }
        Ok(codec.encode_prefixes(seed)?.concat())
    }

    /// Distributions for each of the M seed frames and each categorical slot.
    pub fn forward(&self, seed: ArrayView3<f32>, codec: &MotionCodec) -> Result<ApnPrediction> {
        let ids = self.seed_ids(seed, codec)?;
        let logits = self.logits(&ids, 1)?;
        let m = self.cfg.seed_frames;
        let mut frames = vec![Vec::with_capacity(CATEGORICAL_SLOTS); m];
        for l in &logits {
            let p = to_f32_vec(&softmax_last(l)?)?;
            let v = l.dims()[2];
            for (f, frame) in frames.iter_mut().enumerate() {
                frame.push(p[f * v..(f + 1) * v].to_vec());
            }
        }
        Ok(ApnPrediction { frames })
    }

    /// Summed per-slot cross-entropy; frames whose label is missing are left out of that slot's
    /// mean, and a slot with no labels contributes 0.
    pub fn masked_cross_entropy(&self, logits: &[Tensor], targets: &[[i32; CATEGORICAL_SLOTS]]) -> Result<Tensor> {
        let rows = targets.len();
        let mut total: Option<Tensor> = None;
        for (s, l) in logits.iter().enumerate() {
            let v = self.vocab_sizes[s];
            let mut onehot = vec![0f32; rows * v];
            let mut count = 0usize;
            for (r, t) in targets.iter().enumerate() {
                if t[s] != MISSING {
                    onehot[r * v + t[s] as usize] = 1.0;
                    count += 1;
                }
            }
            let onehot = Tensor::from_vec(onehot, (rows, v), &Device::Cpu)?.to_dtype(l.dtype())?;
            let logp = log_softmax_last(&l.reshape((rows, v))?)?;
            let term = (onehot.mul(&logp)?.sum_all()?.neg()? / count.max(1) as f64)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::invalid("no slots"))
    }

    pub fn save(&self, dir: &Path, manifest: &ApnManifest) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join("apn.safetensors"))?;
        let path = dir.join("apn.json");
        std::fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, schema: &FeatureSchema) -> Result<(Self, ApnManifest)> {
        let path = dir.join("apn.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ApnManifest = serde_json::from_slice(&text)?;
        if manifest.schema_version != APN_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported aPN schema_version {}", manifest.schema_version)));
        }
        let model = ApnModel::new(manifest.config.clone(), schema, manifest.codebook_size, manifest.codes_per_window)?;
        model.store.load(&dir.join("apn.safetensors"))?;
        Ok((model, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApnManifest {
    pub schema_version: u32,
    pub codebook_size: usize,
    pub codes_per_window: usize,
    pub training_config_hash: String,
    pub loss_trace: Vec<f64>,
    pub config: ApnConfig,
}

/// Frozen-codec training windows: IDs `(B, M, C)` and per-frame targets.
struct ApnWindows {
    ids: Vec<Vec<u32>>,
    targets: Vec<Vec<[i32; CATEGORICAL_SLOTS]>>,
}

fn collect_windows(
    data: &[(&PoseSequence, &FeatureTimeline)],
    codec: &MotionCodec,
    m: usize,
    stride: usize,
) -> Result<ApnWindows> {
    let mut ids = Vec::new();
    let mut targets = Vec::new();
    for (seq, tl) in data {
        let n = seq.frame_count().min(tl.len());
        let mut start = 0;
        while start + m <= n {
            let window = seq.frames().slice(ndarray::s![start..start + m, .., ..]);
            ids.push(codec.encode_prefixes(window)?.concat());
            targets.push((start..start + m).map(|f| tl.frames()[f].categorical).collect());
            start += stride;
        }
    }
    Ok(ApnWindows { ids, targets })
}

/// Trains the aPN against a frozen codec. Returns the model and the per-epoch mean loss.
pub fn train_apn(
    data: &[(&PoseSequence, &FeatureTimeline)],
    codec: &MotionCodec,
    schema: &FeatureSchema,
    cfg: &ApnConfig,
) -> Result<(ApnModel, Vec<f64>, ApnManifest)> {
    let labeled: usize = data
        .iter()
        .map(|(_, tl)| tl.frames().iter().filter(|f| f.categorical.iter().any(|&v| v != MISSING)).count())
        .sum();
    if labeled == 0 {
        return Err(Error::invalid("aPN training data has no labeled frames"));
    }
    let model = ApnModel::new(cfg.clone(), schema, codec.config().k, codec.config().codes_per_window)?;
    let windows = collect_windows(data, codec, cfg.seed_frames, cfg.stride)?;
    if windows.ids.is_empty() {
        return Err(Error::invalid(format!("no sequence has {} frames", cfg.seed_frames)));
    }
    let mut opt = Optimizer::adam(model.store.vars(), cfg.learning_rate)?;
    let mut rng = seeded(cfg.seed ^ 0xa9);
    let mut order: Vec<usize> = (0..windows.ids.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let ids: Vec<u32> = chunk.iter().flat_map(|&i| windows.ids[i].iter().copied()).collect();
            let targets: Vec<[i32; CATEGORICAL_SLOTS]> =
                chunk.iter().flat_map(|&i| windows.targets[i].iter().copied()).collect();
            let logits = model.logits(&ids, chunk.len())?;
            let loss = model.masked_cross_entropy(&logits, &targets)?;
            sum += scalar(&loss)?;
            batches += 1;
            opt.backward_step(&loss)?;
        }
        let mean = sum / batches.max(1) as f64;
        log::debug!("aPN epoch {epoch}: loss {mean:.4}");
        trace.push(mean);
    }
    let manifest = ApnManifest {
        schema_version: APN_SCHEMA_VERSION,
        codebook_size: codec.config().k,
        codes_per_window: codec.config().codes_per_window,
        training_config_hash: crate::manifest::config_hash(cfg),
        loss_trace: trace.clone(),
        config: cfg.clone(),
    };
    Ok((model, trace, manifest))
}

/// Soft labels for the seed frames of a chunk.
pub fn infer_seed_features(seed: ArrayView3<f32>, codec: &MotionCodec, model: &ApnModel) -> Result<ApnPrediction> {
    model.forward(seed, codec)
}

/// Argmax accuracy on `slot` over every labeled frame of every M-frame window (stride 1... M).
pub fn apn_accuracy(
    data: &[(&PoseSequence, &FeatureTimeline)],
    codec: &MotionCodec,
    model: &ApnModel,
    slot: usize,
    stride: usize,
) -> Result<f64> {
    let m = model.cfg.seed_frames;
    let windows = collect_windows(data, codec, m, stride)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for batch in (0..windows.ids.len()).collect::<Vec<_>>().chunks(256) {
        let ids: Vec<u32> = batch.iter().flat_map(|&i| windows.ids[i].iter().copied()).collect();
        let logits = model.logits(&ids, batch.len())?;
        let l = logits[slot].to_dtype(DType::F32)?.flatten_to(1)?.to_vec2::<f32>()?;
        for (b, &wi) in batch.iter().enumerate() {
            for f in 0..m {
                let truth = windows.targets[wi][f][slot];
                if truth == MISSING {
                    continue;
                }
                let row = &l[b * m + f];
                let arg = (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best });
                hit += (arg as i32 == truth) as usize;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("no labeled frames for the requested slot"));
    }
    Ok(hit as f64 / total as f64)
}
