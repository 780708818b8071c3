//! Chunked synthesis: fused per-frame inputs -> GRU -> attention blocks -> codec latents ->
//! frozen codec decoder.

mod encoders;
mod synthesize;
mod utterance;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::MotionCodec;
use crate::conditioning::{Conditioner, ConditioningConfig, ConditioningLatent, LabelInput, LatentMode};
use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::motion::GenerationConfig;
use crate::nn::{dropout, seeded, Embedding, Gru, Linear, ParamStore, TransformerBlock};

pub use encoders::{
    stub_audio_encoder, stub_text_encoder, EncoderRegistry, ModalityEncoder, StubAudio, StubText, AUDIO_BANDS,
    ONSET_RATIO, TEXT_DIM,
};
pub use synthesize::{chunk_inputs, generate, temporal_align, BlendAligner, ModelBundle, SeedLabels, TemporalAligner};
pub use utterance::{Utterance, UtteranceFile, Waveform};

pub const GENERATOR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub speaker_count: usize,
    pub speaker_dim: usize,
    pub position_dim: usize,
    /// Frames blended against the previous chunk; 0 disables blending.
    pub align_frames: usize,
    pub text_encoder: String,
    pub audio_encoder: String,
    pub conditioning: ConditioningConfig,
    pub generation: GenerationConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 128,
            heads: 4,
            layers: 2,
            speaker_count: 8,
            speaker_dim: 8,
            position_dim: 8,
            align_frames: 4,
            text_encoder: "stub-text".into(),
            audio_encoder: "stub-audio".into(),
            conditioning: ConditioningConfig::default(),
            generation: GenerationConfig::default(),
            seed: 0,
        }
    }
}

/// Sizes fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorDims {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub window_length: usize,
    pub text_dim: usize,
    pub audio_dim: usize,
}

/// Everything the model sees for one chunk, rows `seed_start .. seed_start + M + N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkInput {
    /// `(M, J, 3)` in meters.
    pub seed: Array3<f32>,
    /// `(M + N, text_dim)`.
    pub text: Array2<f32>,
    /// `(M + N, audio_dim)`.
    pub audio: Array2<f32>,
    /// Feature labels, `M + N` rows.
    pub labels: LabelInput,
    /// Soft seed labels from the aPN, `M + N` rows with only the first M set.
    pub predicted: Option<LabelInput>,
    pub speaker: u32,
}

#[derive(Debug, Clone)]
pub struct ChunkForward {
    /// Normalized poses `(B, N, J * 3)`.
    pub poses: Tensor,
    pub latent: ConditioningLatent,
    /// Embedded labels fed to the conditioner, `(B * (M + N), 16 E + 1)`.
    pub conditioning_input: Tensor,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    cfg: GeneratorConfig,
    dims: GeneratorDims,
    store: ParamStore,
    conditioner: Conditioner,
    speaker: Embedding,
    fusion: Linear,
    gru: Gru,
    blocks: Vec<TransformerBlock>,
    head: Linear,
    /// Rest pose flattened, for normalizing seeds.
    rest: Vec<f32>,
    coord_scale: f32,
}

fn positions(rows: usize, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        for i in 0..dim {
            let freq = 1.0 / 100f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = r as f64 * freq;
            out.push(if i % 2 == 0 { a.sin() } else { a.cos() } as f32);
        }
    }
    out
}

impl GeneratorModel {
    pub fn new(cfg: GeneratorConfig, schema: &FeatureSchema, codec: &MotionCodec, registry: &EncoderRegistry) -> Result<Self> {
        cfg.generation.validate()?;
        if cfg.width == 0 || cfg.speaker_count == 0 || cfg.layers == 0 {
            return Err(Error::invalid("generator width, layers and speaker_count must be positive"));
        }
        let dims = GeneratorDims {
            feature_dim: codec.feature_dim(),
            latent_dim: codec.latent_dim(),
            window_length: codec.window_length(),
            text_dim: registry.get(&cfg.text_encoder)?.output_dim(),
            audio_dim: registry.get(&cfg.audio_encoder)?.output_dim(),
        };
        let mut rng = seeded(cfg.seed);
        let mut store = ParamStore::new(DType::F32);
        let conditioner = Conditioner::new(&mut store, "gen.cond", schema, &cfg.conditioning, &mut rng)?;
        let speaker = Embedding::new(&mut store, "gen.speaker", cfg.speaker_count, cfg.speaker_dim, &mut rng)?;
        let in_dim = dims.feature_dim
            + 1
            + dims.text_dim
            + dims.audio_dim
            + cfg.position_dim
            + cfg.speaker_dim
            + cfg.conditioning.latent_dim
            + conditioner.bank().output_dim();
        let fusion = Linear::new(&mut store, "gen.fusion", in_dim, cfg.width, &mut rng)?;
        let gru = Gru::new(&mut store, "gen.gru", cfg.width, cfg.width, &mut rng)?;
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("gen.block{i}"), cfg.width, cfg.heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut store, "gen.head", cfg.width, dims.latent_dim, &mut rng)?;
        let rest = codec.skeleton().rest_pose().iter().flatten().copied().collect();
        Ok(GeneratorModel {
            coord_scale: codec.config().coord_scale as f32,
            cfg,
            dims,
            store,
            conditioner,
            speaker,
            fusion,
            gru,
            blocks,
            head,
            rest,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn dims(&self) -> GeneratorDims {
        self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.conditioner
    }

    pub fn seed_frames(&self) -> usize {
        self.cfg.generation.seed_frames
    }

    pub fn chunk_frames(&self) -> usize {
        self.cfg.generation.chunk_frames
    }

    fn check(&self, codec: &MotionCodec, inputs: &[ChunkInput]) -> Result<()> {
        if codec.latent_dim() != self.dims.latent_dim
            || codec.feature_dim() != self.dims.feature_dim
            || codec.window_length() != self.dims.window_length
        {
            return Err(Error::invalid("codec does not match the generator's output head"));
        }
        if inputs.is_empty() {
            return Err(Error::invalid("empty chunk batch"));
        }
        let (m, rows) = (self.seed_frames(), self.seed_frames() + self.chunk_frames());
        for c in inputs {
            let (sm, j, _) = c.seed.dim();
            if sm != m || j * 3 != self.dims.feature_dim {
                return Err(Error::invalid(format!("seed must be ({m}, {}, 3), got {:?}", self.dims.feature_dim / 3, c.seed.dim())));
            }
            if c.text.dim() != (rows, self.dims.text_dim) || c.audio.dim() != (rows, self.dims.audio_dim) {
                return Err(Error::invalid("text/audio features do not cover M + N rows"));
            }
            if c.labels.rows() != rows || c.predicted.as_ref().is_some_and(|p| p.rows() != rows) {
                return Err(Error::invalid(format!("labels have {} rows, need {rows}", c.labels.rows())));
            }
            if c.speaker as usize >= self.cfg.speaker_count {
                return Err(Error::invalid(format!("speaker {} outside [0, {})", c.speaker, self.cfg.speaker_count)));
            }
            let finite = c.seed.iter().chain(c.text.iter()).chain(c.audio.iter()).all(|x| x.is_finite());
            if !finite {
                return Err(Error::invalid("non-finite chunk input"));
            }
        }
        Ok(())
    }

    /// Labels -> conditioning latents -> poses. `dropout_p` applies to the recurrent output and
    /// the attention blocks.
    pub fn forward(
        &self,
        codec: &MotionCodec,
        inputs: &[ChunkInput],
        mode: LatentMode,
        dropout_p: f64,
        rng: &mut impl Rng,
    ) -> Result<ChunkForward> {
        self.check(codec, inputs)?;
        let labels = LabelInput::concat(&inputs.iter().map(|c| c.labels.clone()).collect::<Vec<_>>())?;
        let conditioning_input = self.conditioner.bank().embed(&labels)?;
        let latent = self.conditioner.from_embedding(&conditioning_input, mode, rng)?;
        let rows = self.seed_frames() + self.chunk_frames();
        let z = latent.sample.reshape((inputs.len(), rows, self.cfg.conditioning.latent_dim))?;
        let poses = self.forward_latent(codec, inputs, &z, dropout_p, rng)?;
        Ok(ChunkForward { poses, latent, conditioning_input })
    }

    /// Poses `(B, N, J * 3)` given conditioning latents `z` of shape `(B, M + N, Z)`.
    pub fn forward_latent(
        &self,
        codec: &MotionCodec,
        inputs: &[ChunkInput],
        z: &Tensor,
        dropout_p: f64,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        self.check(codec, inputs)?;
        let (m, n) = (self.seed_frames(), self.chunk_frames());
        let rows = m + n;
        let b = inputs.len();
        let f = self.dims.feature_dim;
        let pos = positions(rows, self.cfg.position_dim);
        let static_dim = f + 1 + self.dims.text_dim + self.dims.audio_dim + self.cfg.position_dim;
        let mut data = Vec::with_capacity(b * rows * static_dim);
        for c in inputs {
            for r in 0..rows {
                if r < m {
                    let frame = c.seed.index_axis(ndarray::Axis(0), r);
                    data.extend(frame.iter().zip(&self.rest).map(|(x, rest)| (x - rest) * self.coord_scale));
                    data.push(1.0);
                } else {
                    data.extend(std::iter::repeat_n(0.0, f + 1));
                }
                data.extend(c.text.row(r).iter());
                data.extend(c.audio.row(r).iter());
                data.extend(&pos[r * self.cfg.position_dim..(r + 1) * self.cfg.position_dim]);
            }
        }
        let statics = Tensor::from_vec(data, (b, rows, static_dim), &Device::Cpu)?;
        let speakers: Vec<u32> = inputs.iter().map(|c| c.speaker).collect();
        let spk = self.speaker.lookup(&speakers)?.unsqueeze(1)?.broadcast_as((b, rows, self.cfg.speaker_dim))?;
        let vocab: Vec<usize> = (0..crate::features::CATEGORICAL_SLOTS).map(|s| self.conditioner.bank().table(s).dims()[0]).collect();
        let predicted = LabelInput::concat(
            &inputs
                .iter()
                .map(|c| c.predicted.clone().unwrap_or_else(|| LabelInput::missing(rows, &vocab)))
                .collect::<Vec<_>>(),
        )?;
        let pred = self.conditioner.bank().embed(&predicted)?.reshape((b, rows, ()))?;
        let x = Tensor::cat(&[&statics, &spk.contiguous()?, &z.to_dtype(DType::F32)?, &pred], 2)?;
        let x = self.fusion.forward(&x)?;
        let (mut h, _) = self.gru.forward(&x, None)?;
        h = dropout(&h, dropout_p, rng)?;
        for block in &self.blocks {
            h = block.forward(&h, dropout_p, rng)?;
        }
        let w = self.dims.window_length;
        let groups = n.div_ceil(w);
        let pooled = (0..groups)
            .map(|g| h.narrow(1, m + g * w, w.min(n - g * w))?.mean_keepdim(1))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let pooled = Tensor::cat(&pooled, 1)?;
        let lat = self.head.forward(&pooled)?.reshape((b * groups, self.dims.latent_dim))?;
        let decoded = codec.decode_latent(&lat.to_dtype(codec.dtype())?)?.to_dtype(DType::F32)?;
        Ok(decoded.reshape((b, groups * w, f))?.narrow(1, 0, n)?)
    }

    pub fn save(&self, dir: &Path, manifest: &GeneratorManifest) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join("generator.safetensors"))?;
        let path = dir.join("generator.json");
        std::fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(
        dir: &Path,
        schema: &FeatureSchema,
        codec: &MotionCodec,
        registry: &EncoderRegistry,
    ) -> Result<(Self, GeneratorManifest)> {
        let path = dir.join("generator.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: GeneratorManifest = serde_json::from_slice(&text)?;
        if manifest.schema_version != GENERATOR_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported generator schema_version {}", manifest.schema_version)));
        }
        let model = GeneratorModel::new(manifest.config.clone(), schema, codec, registry)?;
        if model.dims != manifest.dims {
            return Err(Error::Schema("generator checkpoint does not match the codec".into()));
        }
        model.store.load(&dir.join("generator.safetensors"))?;
        Ok((model, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub schema_version: u32,
    pub config: GeneratorConfig,
    pub dims: GeneratorDims,
    pub training_config_hash: String,
    pub optimizer: String,
    pub best_epoch: Option<usize>,
}

/// One chunk in meters, `(N, J, 3)`.
pub fn generate_chunk(
    model: &GeneratorModel,
    codec: &MotionCodec,
    input: &ChunkInput,
    mode: LatentMode,
    rng: &mut impl Rng,
) -> Result<Array3<f32>> {
    let out = model.forward(codec, std::slice::from_ref(input), mode, 0.0, rng)?;
    to_frames(model, &out.poses)
}

/// Normalized `(1, N, J * 3)` -> meters `(N, J, 3)`.
pub(crate) fn to_frames(model: &GeneratorModel, poses: &Tensor) -> Result<Array3<f32>> {
    let v = crate::nn::to_f32_vec(poses)?;
    let n = v.len() / model.dims.feature_dim;
    let data: Vec<f32> = v
        .iter()
        .enumerate()
        .map(|(i, x)| x / model.coord_scale + model.rest[i % model.dims.feature_dim])
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("generator produced non-finite output"));
    }
    Ok(Array3::from_shape_vec((n, model.dims.feature_dim / 3, 3), data).expect("pose shape"))
}
