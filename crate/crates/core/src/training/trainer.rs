//! Generator training loop against frozen codec and aPN.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    dropout_schedule, label_dropout, mix_sampler, regression_loss, validation_mean, wgan_div_losses, Critic,
    EarlyStopping, SampleRef, StopDecision, TrainConfig,
};
use crate::apn::{ApnModel, ApnPrediction};
use crate::codec::MotionCodec;
use crate::conditioning::{kl_divergence, LatentMode};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureTimeline};
use crate::generator::{
    chunk_inputs, ChunkInput, EncoderRegistry, GeneratorConfig, GeneratorManifest, GeneratorModel, SeedLabels,
    Utterance, GENERATOR_SCHEMA_VERSION,
};
use crate::motion::synth::SynthSample;
use crate::motion::PoseSequence;
use crate::nn::{scalar, seeded, tensor_from, Optimizer, ParamStore};

pub const TRAIN_SCHEMA_VERSION: u32 = 1;
const CRITIC_HIDDEN: usize = 128;

/// A motion clip with its speech and, for annotated data, its feature timeline.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    /// Validation losses are reported per dataset name.
    pub dataset: String,
    pub utterance: Utterance,
    pub motion: PoseSequence,
}

impl TrainSample {
    /// Annotated samples keep their timeline and land in dataset "annotated".
    pub fn from_synth(sample: &SynthSample) -> Result<Self> {
        let annotated = sample.annotated();
        Ok(TrainSample {
            id: sample.id.clone(),
            dataset: if annotated { "annotated" } else { "unannotated" }.into(),
            utterance: Utterance::from_sample(sample, annotated)?,
            motion: sample.motion.clone(),
        })
    }
}

/// Switches used by the ablation variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Treat every feature label as missing, in training and validation.
    pub force_missing_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub reg_loss: f64,
    pub kl_loss: f64,
    pub val_loss: BTreeMap<String, f64>,
    pub val_loss_mean: f64,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let datasets: Vec<String> = self.epochs.first().map(|e| e.val_loss.keys().cloned().collect()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_string(), "d_loss".into(), "g_loss".into(), "reg_loss".into(), "kl_loss".into()];
        header.extend(datasets.iter().map(|d| format!("val_loss_{d}")));
        header.extend(["val_loss_mean".to_string(), "dropout_p".into()]);
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string()];
            row.extend([e.d_loss, e.g_loss, e.reg_loss, e.kl_loss].iter().map(|v| format!("{v:.9e}")));
            row.extend(datasets.iter().map(|d| format!("{:.9e}", e.val_loss.get(d).copied().unwrap_or(f64::NAN))));
            row.push(format!("{:.9e}", e.val_loss_mean));
            row.push(format!("{}", e.dropout_p));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: GeneratorModel,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    /// Largest |value| of the embedded feature labels seen by the conditioner during training.
    pub conditioning_input_max_abs: f32,
    pub manifest: GeneratorManifest,
}

impl TrainOutcome {
    /// `generator/` checkpoint plus `history.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(&dir.join("generator"), &self.manifest)?;
        self.history.write_csv(&dir.join("history.csv"))
    }
}

struct Prepared {
    text: Array2<f32>,
    audio: Array2<f32>,
}

struct Window {
    sample: usize,
    seed_start: i64,
    seed: Array3<f32>,
    /// Normalized target frames, `N * F` values.
    target: Vec<f32>,
    predicted: Option<ApnPrediction>,
}

struct Context<'a> {
    model: &'a GeneratorModel,
    codec: &'a MotionCodec,
    samples: &'a [TrainSample],
    prepared: Vec<Prepared>,
    vocab: Vec<usize>,
    options: TrainOptions,
}

impl Context<'_> {
    fn uses_timeline(&self, sample: usize) -> Option<&FeatureTimeline> {
        if self.options.force_missing_labels {
            None
        } else {
            self.samples[sample].utterance.timeline.as_ref()
        }
    }

    fn input(&self, w: &Window, timeline: Option<&FeatureTimeline>) -> Result<ChunkInput> {
        let labels = match (timeline, &w.predicted) {
            (Some(tl), _) => SeedLabels::Timeline(tl),
            (None, Some(p)) => SeedLabels::Predicted(p),
            (None, None) => SeedLabels::Missing,
        };
        let p = &self.prepared[w.sample];
        chunk_inputs(
            self.model,
            w.seed_start,
            w.seed.clone(),
            &p.text,
            &p.audio,
            labels,
            self.samples[w.sample].utterance.speaker_id,
            &self.vocab,
        )
    }
}

fn prepare(samples: &[TrainSample], model: &GeneratorModel, registry: &EncoderRegistry) -> Result<Vec<Prepared>> {
    let text = registry.get(&model.config().text_encoder)?;
    let audio = registry.get(&model.config().audio_encoder)?;
    samples
        .iter()
        .map(|s| {
            let n = s.motion.frame_count();
            let fps = s.motion.fps();
            Ok(Prepared { text: text.encode(&s.utterance, n, fps)?, audio: audio.encode(&s.utterance, n, fps)? })
        })
        .collect()
}

/// Windows whose emitted frames start at `0, stride, 2 stride, ...` and fit in the clip. The
/// first window is seeded with the rest pose.
fn windows(
    samples: &[TrainSample],
    codec: &MotionCodec,
    apn: Option<&ApnModel>,
    m: usize,
    n: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    let rest = crate::motion::rest_frames(codec.skeleton(), 1);
    let scale = codec.config().coord_scale as f32;
    let mut out = Vec::new();
    for (si, s) in samples.iter().enumerate() {
        let frames = s.motion.frames();
        let total = frames.dim().0;
        let mut emit = 0;
        while emit + n <= total {
            let seed_start = emit as i64 - m as i64;
            let mut seed = Array3::zeros((m, frames.dim().1, 3));
            for r in 0..m {
                let f = seed_start + r as i64;
                let src = if f < 0 { rest.index_axis(Axis(0), 0) } else { frames.index_axis(Axis(0), f as usize) };
                seed.index_axis_mut(Axis(0), r).assign(&src);
            }
            let target: Vec<f32> = frames
                .slice(s![emit..emit + n, .., ..])
                .outer_iter()
                .flat_map(|fr| {
                    fr.iter()
                        .zip(rest.iter())
                        .map(|(x, r)| (x - r) * scale)
                        .collect::<Vec<_>>()
                })
                .collect();
            let predicted = apn.map(|a| crate::apn::infer_seed_features(seed.view(), codec, a)).transpose()?;
            out.push(Window { sample: si, seed_start, seed, target, predicted });
            emit += stride;
        }
    }
    Ok(out)
}

/// Position and velocity features `(B, N F + (N - 1) F)` of poses `(B, N, F)`, divided by the
/// square root of their count so a unit critic gradient is spread like a unit per-coordinate one.
fn critic_features(x: &Tensor) -> Result<Tensor> {
    let n = x.dims()[1];
    let vel = (x.narrow(1, 1, n - 1)? - x.narrow(1, 0, n - 1)?)?;
    let flat = Tensor::cat(&[x.flatten_from(1)?, vel.flatten_from(1)?], 1)?;
    let dim = flat.dims()[1] as f64;
    Ok((flat / dim.sqrt())?)
}

fn targets(ws: &[&Window], n: usize, f: usize) -> Result<Tensor> {
    let data: Vec<f32> = ws.iter().flat_map(|w| w.target.iter().copied()).collect();
    tensor_from(data, &[ws.len(), n, f], DType::F32)
}

/// Mean regression loss per dataset, with deterministic latents and no dropout.
fn validate_windows(ctx: &Context<'_>, windows: &[Window]) -> Result<BTreeMap<String, f64>> {
    let (n, f) = (ctx.model.chunk_frames(), ctx.model.dims().feature_dim);
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in ctx.samples {
        sums.entry(s.dataset.clone()).or_insert((0.0, 0));
    }
    let mut rng = seeded(0);
    for batch in windows.chunks(64) {
        let inputs = batch
            .iter()
            .map(|w| ctx.input(w, ctx.uses_timeline(w.sample)))
            .collect::<Result<Vec<_>>>()?;
        let out = ctx.model.forward(ctx.codec, &inputs, LatentMode::Deterministic, 0.0, &mut rng)?;
        let refs: Vec<&Window> = batch.iter().collect();
        let real = targets(&refs, n, f)?;
        for (i, w) in batch.iter().enumerate() {
            let loss = scalar(&regression_loss(&out.poses.narrow(0, i, 1)?, &real.narrow(0, i, 1)?)?)?;
            let e = sums.get_mut(&ctx.samples[w.sample].dataset).expect("dataset registered");
            e.0 += loss;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(k, (s, c))| (k, s / c as f64))
        .collect())
}

/// Per-dataset validation losses of `model` on `samples` (non-overlapping windows).
pub fn validation_losses(
    model: &GeneratorModel,
    codec: &MotionCodec,
    apn: Option<&ApnModel>,
    samples: &[TrainSample],
    options: TrainOptions,
) -> Result<BTreeMap<String, f64>> {
    let registry = EncoderRegistry::default();
    let ctx = Context {
        model,
        codec,
        samples,
        prepared: prepare(samples, model, &registry)?,
        vocab: FeatureSchema::default().vocab_sizes(),
        options,
    };
    let ws = windows(samples, codec, apn, model.seed_frames(), model.chunk_frames(), model.chunk_frames())?;
    validate_windows(&ctx, &ws)
}

/// Trains a fresh generator (initialized from `cfg.seed`) with the adversarial recipe and
/// returns the parameters of the best validation epoch.
pub fn train(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    codec: &MotionCodec,
    apn: Option<&ApnModel>,
    gen_cfg: &GeneratorConfig,
    cfg: &TrainConfig,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let schema = FeatureSchema::default();
    let registry = EncoderRegistry::default();
    let gen_cfg = GeneratorConfig { seed: cfg.seed, ..gen_cfg.clone() };
    let model = GeneratorModel::new(gen_cfg.clone(), &schema, codec, &registry)?;
    let (m, n, f) = (model.seed_frames(), model.chunk_frames(), model.dims().feature_dim);

    let train_windows = windows(train_set, codec, apn, m, n, cfg.window_stride)?;
    let val_windows = windows(val_set, codec, apn, m, n, n)?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::invalid(format!("no clip is long enough for a {n}-frame window")));
    }
    let train_ctx = Context {
        model: &model,
        codec,
        samples: train_set,
        prepared: prepare(train_set, &model, &registry)?,
        vocab: schema.vocab_sizes(),
        options,
    };
    let val_ctx = Context {
        model: &model,
        codec,
        samples: val_set,
        prepared: prepare(val_set, &model, &registry)?,
        vocab: schema.vocab_sizes(),
        options,
    };
    let (ann, unann): (Vec<usize>, Vec<usize>) =
        (0..train_windows.len()).partition(|&i| train_set[train_windows[i].sample].utterance.timeline.is_some());

    let mut rng = seeded(cfg.seed ^ 0x7a11);
    let mut critic_store = ParamStore::new(DType::F32);
    let critic = Critic::new(&mut critic_store, "critic", n * f + (n - 1) * f, CRITIC_HIDDEN, &mut rng)?;
    let mut critic_opt = Optimizer::adam(critic_store.vars(), cfg.learning_rate)?.with_clip(cfg.grad_clip);
    let mut gen_opt = Optimizer::adam(model.store().vars(), cfg.learning_rate)?.with_clip(cfg.grad_clip);

    let per_epoch = if cfg.samples_per_epoch > 0 { cfg.samples_per_epoch } else { train_windows.len() };
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store().snapshot()?;
    let mut history = TrainHistory::default();
    let mut cond_max = 0f32;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let p = dropout_schedule(epoch, cfg);
        let order = mix_sampler(ann.len(), unann.len(), cfg.oversample_ratio, per_epoch, &mut rng);
        let (mut d_sum, mut g_sum, mut r_sum, mut k_sum, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let ws: Vec<&Window> = batch
                .iter()
                .map(|r| match r {
                    SampleRef::Annotated(i) => &train_windows[ann[*i]],
                    SampleRef::Unannotated(i) => &train_windows[unann[*i]],
                })
                .collect();
            let mut inputs = Vec::with_capacity(ws.len());
            for w in &ws {
                let input = match train_ctx.uses_timeline(w.sample) {
                    Some(tl) => {
                        let (tl, _) = label_dropout(tl, cfg.label_dropout_p, &mut rng);
                        train_ctx.input(w, Some(&tl))?
                    }
                    None => train_ctx.input(w, None)?,
                };
                inputs.push(input);
            }
            let out = model.forward(codec, &inputs, LatentMode::Sample, p, &mut rng)?;
            let cmax = scalar(&out.conditioning_input.abs()?.max_all()?)? as f32;
            cond_max = cond_max.max(cmax);
            let real = targets(&ws, n, f)?;
            let real_x = critic_features(&real)?;
            let fake_x = critic_features(&out.poses)?;

            let b = ws.len();
            let mut d_last = 0.0;
            for _ in 0..cfg.critic_steps {
                let eps = tensor_from((0..b).map(|_| rng.gen::<f32>()).collect(), &[b, 1], DType::F32)?;
                let mix = (real_x.broadcast_mul(&eps)? + fake_x.detach().broadcast_mul(&eps.affine(-1.0, 1.0)?)?)?;
                let (d_loss, _) = wgan_div_losses(
                    &critic.score(&real_x)?,
                    &critic.score(&fake_x.detach())?,
                    &critic.input_grad_norm(&mix)?,
                    cfg.wgan_k,
                    cfg.wgan_p,
                )?;
                d_last = scalar(&d_loss)?;
                critic_opt.backward_step(&d_loss)?;
            }
            let g_loss = critic.score(&fake_x)?.mean_all()?.neg()?;
            let reg = regression_loss(&out.poses, &real)?;
            let mut total = ((&reg * cfg.regression_weight)? + (&g_loss * cfg.gan_weight)?)?;
            let kl = kl_divergence(&out.latent.mu, &out.latent.logvar)?;
            if cfg.kl_weight > 0.0 {
                total = (total + (&kl * cfg.kl_weight)?)?;
            }
            gen_opt.backward_step(&total)?;
            d_sum += d_last;
            g_sum += scalar(&g_loss)?;
            r_sum += scalar(&reg)?;
            k_sum += scalar(&kl)?;
            batches += 1;
        }
        let val = validate_windows(&val_ctx, &val_windows)?;
        let val_mean = validation_mean(&val.values().copied().collect::<Vec<_>>());
        let nb = batches.max(1) as f64;
        log::info!("epoch {epoch}: reg {:.5} g {:.4} d {:.4} val {val_mean:.5}", r_sum / nb, g_sum / nb, d_sum / nb);
        history.epochs.push(EpochRecord {
            epoch,
            d_loss: d_sum / nb,
            g_loss: g_sum / nb,
            reg_loss: r_sum / nb,
            kl_loss: k_sum / nb,
            val_loss: val,
            val_loss_mean: val_mean,
            dropout_p: p,
        });
        match stopper.observe(epoch, val_mean) {
            StopDecision::Improved => best = model.store().snapshot()?,
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.store().restore(&best)?;
    let (best_epoch, best_val) = stopper.best().ok_or_else(|| Error::invalid("max_epochs is 0"))?;
    let manifest = GeneratorManifest {
        schema_version: GENERATOR_SCHEMA_VERSION,
        config: gen_cfg,
        dims: model.dims(),
        training_config_hash: crate::manifest::config_hash(cfg),
        optimizer: format!("adamw(lr={}, weight_decay=0, clip={})", cfg.learning_rate, cfg.grad_clip),
        best_epoch: Some(best_epoch),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val,
        stopped_early,
        conditioning_input_max_abs: cond_max,
        manifest,
    })
}
