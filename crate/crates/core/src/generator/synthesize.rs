use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};

use super::{generate_chunk, ChunkInput, EncoderRegistry, GeneratorModel, Utterance};
use crate::apn::{ApnModel, ApnPrediction};
use crate::codec::MotionCodec;
use crate::conditioning::{LabelInput, LatentMode};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureTimeline};
use crate::motion::{chunk_plan, GenerationConfig, PoseSequence};
use crate::nn::seeded;

/// Where a chunk's labels come from.
#[derive(Debug, Clone, Copy)]
pub enum SeedLabels<'a> {
    /// Hard labels on every row.
    Timeline(&'a FeatureTimeline),
    /// aPN distributions for the seed rows; they enter through their own channel, the feature
    /// labels stay missing.
    Predicted(&'a ApnPrediction),
    Missing,
}

/// Builds the model input for the chunk whose seed starts at frame `seed_start` (negative
/// before the sequence). Rows outside `[0, frame_count)` get zero text and audio features.
pub fn chunk_inputs(
    model: &GeneratorModel,
    seed_start: i64,
    seed: Array3<f32>,
    text: &Array2<f32>,
    audio: &Array2<f32>,
    labels: SeedLabels<'_>,
    speaker: u32,
    vocab_sizes: &[usize],
) -> Result<ChunkInput> {
    let m = model.seed_frames();
    let rows = m + model.chunk_frames();
    let slice_rows = |all: &Array2<f32>| {
        let mut out = Array2::zeros((rows, all.ncols()));
        for r in 0..rows {
            let f = seed_start + r as i64;
            if f >= 0 && (f as usize) < all.nrows() {
                out.row_mut(r).assign(&all.row(f as usize));
            }
        }
        out
    };
    let mut input = LabelInput::missing(rows, vocab_sizes);
    let mut predicted = None;
    match labels {
        SeedLabels::Timeline(tl) => {
            for r in 0..rows {
                input.set_hard(r, &tl.get(seed_start + r as i64))?;
            }
        }
        SeedLabels::Predicted(p) => {
            let mut soft = LabelInput::missing(rows, vocab_sizes);
            for (r, slots) in p.frames.iter().enumerate().take(m) {
                for (slot, dist) in slots.iter().enumerate() {
                    soft.set_soft(r, slot, dist)?;
                }
            }
            predicted = Some(soft);
        }
        SeedLabels::Missing => {}
    }
    Ok(ChunkInput {
        seed,
        text: slice_rows(text),
        audio: slice_rows(audio),
        labels: input,
        predicted,
        speaker,
    })
}

/// Cross-fades the first `a` frames of `new` against a constant-velocity extrapolation of
/// `prev_tail`, with weights `(a - i) / (a + 1)` on the extrapolation.
pub fn temporal_align(prev_tail: ArrayView3<f32>, new: &Array3<f32>, a: usize) -> Array3<f32> {
    let mut out = new.clone();
    let m = prev_tail.dim().0;
    if a == 0 || m == 0 {
        return out;
    }
    let last = prev_tail.index_axis(Axis(0), m - 1).to_owned();
    let vel = if m >= 2 { &last - &prev_tail.index_axis(Axis(0), m - 2) } else { last.clone() * 0.0 };
    for i in 0..a.min(new.dim().0) {
        let w = (a - i) as f32 / (a + 1) as f32;
        let extrap = &last + &(&vel * (i + 1) as f32);
        let blended = &extrap * w + &new.index_axis(Axis(0), i) * (1.0 - w);
        out.index_axis_mut(Axis(0), i).assign(&blended);
    }
    out
}

/// Joins a freshly generated chunk onto the seed frames it continues from.
pub trait TemporalAligner: std::fmt::Debug + Send + Sync {
    /// `prev_tail` is `(M, J, 3)`, `new` is `(N, J, 3)`; returns `(N, J, 3)`.
    fn align(&self, prev_tail: ArrayView3<f32>, new: &Array3<f32>, align_frames: usize) -> Array3<f32>;
}

/// The deterministic blend of [`temporal_align`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BlendAligner;

impl TemporalAligner for BlendAligner {
    fn align(&self, prev_tail: ArrayView3<f32>, new: &Array3<f32>, align_frames: usize) -> Array3<f32> {
        temporal_align(prev_tail, new, align_frames)
    }
}

/// Trained pieces needed for generation.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub schema: FeatureSchema,
    pub codec: MotionCodec,
    pub apn: Option<ApnModel>,
    pub generator: GeneratorModel,
    pub registry: EncoderRegistry,
    pub aligner: Arc<dyn TemporalAligner>,
}

impl ModelBundle {
    /// Loads `codec/`, `generator/` and, when present, `apn/` from a checkpoint directory.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint directory not found")));
        }
        let schema = FeatureSchema::default();
        let registry = EncoderRegistry::default();
        let (codec, _) = MotionCodec::load(&dir.join("codec"))?;
        let apn = if dir.join("apn").join("apn.json").exists() {
            Some(ApnModel::load(&dir.join("apn"), &schema)?.0)
        } else {
            None
        };
        let (generator, _) = GeneratorModel::load(&dir.join("generator"), &schema, &codec, &registry)?;
        Ok(ModelBundle { schema, codec, apn, generator, registry, aligner: Arc::new(BlendAligner) })
    }
}

/// Chunked synthesis of a whole utterance: `round(duration * fps)` frames.
pub fn generate(
    utterance: &Utterance,
    cfg: &GenerationConfig,
    bundle: &ModelBundle,
    mode: LatentMode,
    seed: u64,
) -> Result<PoseSequence> {
    let model = &bundle.generator;
    let codec = &bundle.codec;
    if cfg.seed_frames != model.seed_frames() || cfg.chunk_frames != model.chunk_frames() {
        return Err(Error::invalid(format!(
            "model was built for M={} N={}, asked for M={} N={}",
            model.seed_frames(),
            model.chunk_frames(),
            cfg.seed_frames,
            cfg.chunk_frames
        )));
    }
    let total = cfg.frame_count(utterance.duration_s);
    if total == 0 {
        return Err(Error::invalid(format!("utterance of {} s is shorter than one frame", utterance.duration_s)));
    }
    if let Some(tl) = &utterance.timeline {
        if (tl.fps() - cfg.fps).abs() > 1e-9 {
            return Err(Error::invalid(format!("timeline is at {} fps, generation at {}", tl.fps(), cfg.fps)));
        }
    }
    let plan = chunk_plan(total, cfg)?;
    let text = bundle.registry.get(&model.config().text_encoder)?.encode(utterance, total, cfg.fps)?;
    let audio = bundle.registry.get(&model.config().audio_encoder)?.encode(utterance, total, cfg.fps)?;
    let vocab = bundle.schema.vocab_sizes();
    let skeleton = codec.skeleton().clone();
    let rest = PoseSequence::rest(skeleton.clone(), cfg.fps, 1)?.into_frames();
    let (m, j) = (cfg.seed_frames, skeleton.joint_count());
    let mut out = Array3::<f32>::zeros((total, j, 3));
    let mut rng = seeded(seed);
    for chunk in &plan.chunks {
        let mut seed_frames = Array3::zeros((m, j, 3));
        for r in 0..m {
            let f = chunk.seed_start + r as i64;
            let src = if f < 0 { rest.index_axis(Axis(0), 0) } else { out.index_axis(Axis(0), f as usize) };
            seed_frames.index_axis_mut(Axis(0), r).assign(&src);
        }
        let predicted;
        let labels = match (&utterance.timeline, &bundle.apn) {
            (Some(tl), _) => SeedLabels::Timeline(tl),
            (None, Some(apn)) => {
                predicted = crate::apn::infer_seed_features(seed_frames.view(), codec, apn)?;
                SeedLabels::Predicted(&predicted)
            }
            (None, None) => SeedLabels::Missing,
        };
        let input = chunk_inputs(
            model,
            chunk.seed_start,
            seed_frames.clone(),
            &text,
            &audio,
            labels,
            utterance.speaker_id,
            &vocab,
        )?;
        let new = generate_chunk(model, codec, &input, mode, &mut rng)?;
        let aligned = bundle.aligner.align(seed_frames.view(), &new, model.config().align_frames);
        out.slice_mut(s![chunk.emit_start..chunk.emit_end, .., ..])
            .assign(&aligned.slice(s![..chunk.emit_len(), .., ..]));
    }
    PoseSequence::new(skeleton, cfg.fps, out)
}
