//! Adversarial training recipe: WGAN-div losses, regression loss, dataset mixing, label dropout,
//! dropout schedule, early stopping and the generator training loop.

mod critic;
mod trainer;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTimeline;

pub use critic::Critic;
pub use trainer::{
    train, validation_losses, EpochRecord, TrainHistory, TrainOptions, TrainOutcome, TrainSample, TRAIN_SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the regression loss.
    pub regression_weight: f64,
    /// Weight of the adversarial generator loss.
    pub gan_weight: f64,
    pub label_dropout_p: f64,
    /// Share of training samples drawn from the annotated set.
    pub oversample_ratio: f64,
    pub dropout_step: f64,
    pub dropout_interval: usize,
    pub dropout_max: f64,
    pub wgan_k: f64,
    pub wgan_p: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Weight of the KL term of the conditioning latent.
    pub kl_weight: f64,
    /// Training windows per epoch; 0 means one per available window.
    pub samples_per_epoch: usize,
    /// Frame step between training windows cut from a sequence.
    pub window_stride: usize,
    /// Global gradient-norm clip for both optimizers; 0 disables it.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 2e-5,
            regression_weight: 20.0,
            gan_weight: 2.0,
            label_dropout_p: 0.25,
            oversample_ratio: 0.2,
            dropout_step: 0.05,
            dropout_interval: 25,
            dropout_max: 0.3,
            wgan_k: 2.0,
            wgan_p: 6.0,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            critic_steps: 1,
            kl_weight: 0.0,
            samples_per_epoch: 0,
            window_stride: 15,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    /// Values used by the original large-scale runs.
    pub fn large_scale() -> Self {
        TrainConfig {
            batch_size: 190,
            max_epochs: usize::MAX,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("learning_rate", self.learning_rate),
            ("regression_weight", self.regression_weight),
            ("gan_weight", self.gan_weight),
            ("dropout_step", self.dropout_step),
            ("dropout_max", self.dropout_max),
            ("kl_weight", self.kl_weight),
            ("grad_clip", self.grad_clip),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {w}")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_dropout_p) {
            return Err(Error::Config(format!("label_dropout_p {} outside [0, 1]", self.label_dropout_p)));
        }
        if !(self.oversample_ratio > 0.0 && self.oversample_ratio <= 1.0) {
            return Err(Error::Config(format!("oversample_ratio {} outside (0, 1]", self.oversample_ratio)));
        }
        if !(self.wgan_k > 0.0 && self.wgan_p > 0.0) {
            return Err(Error::Config("wgan_k and wgan_p must be positive".into()));
        }
        if self.batch_size == 0 || self.dropout_interval == 0 || self.window_stride == 0 {
            return Err(Error::Config("batch_size, dropout_interval and window_stride must be positive".into()));
        }
        Ok(())
    }
}

/// WGAN-div critic and generator losses:
/// `d = mean(fake) - mean(real) + k * mean(|grad|^p)`, `g = -mean(fake)`.
pub fn wgan_div_losses(
    real_scores: &Tensor,
    fake_scores: &Tensor,
    grad_norms: &Tensor,
    k: f64,
    p: f64,
) -> Result<(Tensor, Tensor)> {
    let penalty = (grad_norms.powf(p)?.mean_all()? * k)?;
    let d = ((fake_scores.mean_all()? - real_scores.mean_all()?)? + penalty)?;
    let g = fake_scores.mean_all()?.neg()?;
    Ok((d, g))
}

/// Equal-weight average of the mean absolute coordinate error and the mean absolute error of
/// frame-to-frame velocities. Inputs are `(B, T, F)` or `(T, F)`; time is the second-to-last axis.
/// A single frame has no velocity term (it counts as 0).
pub fn regression_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "regression shapes differ: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let diff = (pred - target)?;
    let pos = diff.abs()?.mean_all()?;
    let axis = pred.rank() - 2;
    let t = pred.dims()[axis];
    if t < 2 {
        return Ok((pos * 0.5)?);
    }
    let vel = (diff.narrow(axis, 1, t - 1)? - diff.narrow(axis, 0, t - 1)?)?.abs()?.mean_all()?;
    Ok(((pos + vel)? * 0.5)?)
}

/// Which set a mixed sample comes from, and its index in that set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRef {
    Annotated(usize),
    Unannotated(usize),
}

impl SampleRef {
    pub fn is_annotated(&self) -> bool {
        matches!(self, SampleRef::Annotated(_))
    }
}

/// Stream of `count` samples where sample `n` is annotated iff `floor((n + 1) r + u)` exceeds
/// `floor(n r + u)` for a random phase `u`, so every window of `w` samples holds `w r` annotated
/// samples up to one. Each set is walked in shuffled passes.
pub fn mix_sampler(
    annotated: usize,
    unannotated: usize,
    ratio: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<SampleRef> {
    let mut ratio = ratio.clamp(0.0, 1.0);
    if annotated == 0 {
        if ratio > 0.0 {
            log::warn!("annotated set is empty, sampling only unannotated data");
        }
        ratio = 0.0;
    } else if unannotated == 0 && ratio < 1.0 {
        log::warn!("unannotated set is empty, sampling only annotated data");
        ratio = 1.0;
    }
    if annotated == 0 && unannotated == 0 {
        return Vec::new();
    }
    let u: f64 = rng.gen();
    let mut pools = [Pool::new(annotated), Pool::new(unannotated)];
    (0..count)
        .map(|n| {
            let hit = ((n + 1) as f64 * ratio + u).floor() > (n as f64 * ratio + u).floor();
            if hit {
                SampleRef::Annotated(pools[0].next(rng))
            } else {
                SampleRef::Unannotated(pools[1].next(rng))
            }
        })
        .collect()
}

struct Pool {
    order: Vec<usize>,
    pos: usize,
}

impl Pool {
    fn new(n: usize) -> Self {
        Pool {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// With probability `p` the whole timeline becomes missing. Returns whether it was dropped.
/// Always consumes exactly one uniform draw.
pub fn label_dropout(timeline: &FeatureTimeline, p: f64, rng: &mut impl Rng) -> (FeatureTimeline, bool) {
    let u: f64 = rng.gen();
    if u < p {
        (FeatureTimeline::missing(timeline.fps(), timeline.len()), true)
    } else {
        (timeline.clone(), false)
    }
}

/// Dropout probability at `epoch`: `min(step * (1 + floor(epoch / interval)), max)`.
pub fn dropout_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = 1 + epoch / cfg.dropout_interval;
    (cfg.dropout_step * steps as f64).min(cfg.dropout_max)
}

/// Mean of the per-dataset validation losses.
pub fn validation_mean(per_dataset: &[f64]) -> f64 {
    if per_dataset.is_empty() {
        return f64::NAN;
    }
    per_dataset.iter().sum::<f64>() / per_dataset.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` epochs without a strictly lower validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if !(val_loss < b) => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{scalar, seeded};
    use candle_core::{DType, Device};
    use proptest::prelude::*;
    use rand::Rng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v, v.len(), &Device::Cpu).unwrap()
    }

    fn losses(real: &[f64], fake: &[f64], grads: &[f64], k: f64, p: f64) -> (f64, f64) {
        let (d, g) = wgan_div_losses(&t(real), &t(fake), &t(grads), k, p).unwrap();
        (scalar(&d).unwrap(), scalar(&g).unwrap())
    }

    #[test]
    fn wgan_div_examples() {
        assert_eq!(losses(&[0.3, -0.2], &[0.3, -0.2], &[0.0, 0.0], 2.0, 6.0).0, 0.0);
        assert_eq!(losses(&[1.0, 1.0], &[-1.0, -1.0], &[0.0, 0.0], 2.0, 6.0).0, -2.0);
        let (d, g) = losses(&[0.0], &[0.0], &[1.0], 2.0, 6.0);
        assert_eq!(d, 2.0);
        assert_eq!(g, 0.0);
    }

    #[test]
    fn critic_loss_falls_as_fakes_score_lower() {
        let a = losses(&[1.0, 2.0], &[0.5, 0.5], &[0.5, 0.5], 2.0, 6.0).0;
        let b = losses(&[1.0, 2.0], &[0.0, -0.5], &[0.5, 0.5], 2.0, 6.0).0;
        assert!(b < a);
    }

    fn seq(v: &[f64], frames: usize) -> Tensor {
        Tensor::from_slice(v, (frames, v.len() / frames), &Device::Cpu).unwrap()
    }

    #[test]
    fn regression_examples() {
        let a = seq(&[0.1, 0.2, 0.1, 0.2, 0.1, 0.2], 3);
        assert_eq!(scalar(&regression_loss(&a, &a).unwrap()).unwrap(), 0.0);
        let b = (&a + 0.01).unwrap();
        let v = scalar(&regression_loss(&b, &a).unwrap()).unwrap();
        assert!((v - 0.005).abs() < 1e-12, "{v}");
        let c = seq(&[0.3, 0.0, -0.1, 0.4, 0.2, 0.2], 3);
        assert_eq!(
            scalar(&regression_loss(&a, &c).unwrap()).unwrap(),
            scalar(&regression_loss(&c, &a).unwrap()).unwrap()
        );
        assert!(regression_loss(&a, &seq(&[0.0; 4], 2)).is_err());
    }

    #[test]
    fn mix_ratio_one_in_five() {
        let s = mix_sampler(50, 300, 0.2, 1000, &mut seeded(0));
        let annotated = s.iter().filter(|r| r.is_annotated()).count();
        assert!((199..=201).contains(&annotated), "{annotated}");
        assert!(mix_sampler(5, 5, 1.0, 100, &mut seeded(0)).iter().all(SampleRef::is_annotated));
        assert!(mix_sampler(0, 5, 0.2, 100, &mut seeded(0)).iter().all(|r| !r.is_annotated()));
    }

    proptest! {
        #[test]
        fn mix_windows_stay_within_one(seed in 0u64..500, b in 1usize..20) {
            let s = mix_sampler(7, 40, 0.2, 600, &mut seeded(seed));
            let w = 5 * b;
            for start in 0..s.len() - w {
                let a = s[start..start + w].iter().filter(|r| r.is_annotated()).count();
                prop_assert!(a + 1 >= b && a <= b + 1);
            }
        }
    }

    #[test]
    fn label_dropout_boundaries_and_rate() {
        let mut tl = FeatureTimeline::missing(15.0, 10);
        tl.frames_mut()[3].categorical[0] = 2;
        tl.frames_mut()[3].occurrence = 0.5;
        let mut rng = seeded(0);
        assert_eq!(label_dropout(&tl, 0.0, &mut rng).0, tl);
        let (d, dropped) = label_dropout(&tl, 1.0, &mut rng);
        assert!(dropped && d.frames().iter().all(|f| f.is_missing()));
        let n = (0..10_000).filter(|_| label_dropout(&tl, 0.25, &mut rng).1).count();
        let rate = n as f64 / 1e4;
        assert!((0.235..=0.265).contains(&rate), "{rate}");
    }

    #[test]
    fn dropout_schedule_steps() {
        let cfg = TrainConfig::default();
        assert!((dropout_schedule(0, &cfg) - 0.05).abs() < 1e-12);
        assert!((dropout_schedule(24, &cfg) - 0.05).abs() < 1e-12);
        assert!((dropout_schedule(60, &cfg) - 0.15).abs() < 1e-12);
        assert!((dropout_schedule(500, &cfg) - 0.30).abs() < 1e-12);
    }

    #[test]
    fn early_stopping_counts_from_best() {
        let mut es = EarlyStopping::new(3);
        assert_eq!(es.observe(0, 5.0), StopDecision::Improved);
        assert_eq!(es.observe(1, 4.0), StopDecision::Improved);
        assert_eq!(es.observe(2, 4.0), StopDecision::Continue);
        assert_eq!(es.observe(3, 4.5), StopDecision::Continue);
        assert_eq!(es.observe(4, 4.1), StopDecision::Stop);
        assert_eq!(es.best(), Some((1, 4.0)));
    }

    #[test]
    fn validation_is_plain_mean() {
        assert_eq!(validation_mean(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { label_dropout_p: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { oversample_ratio: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gan_weight: -1.0, ..TrainConfig::default() }.validate().is_err());
        let _ = DType::F32;
    }

    /// A two-joint, eight-frame motion distribution: adversarial steps alone pull a learned
    /// Gaussian toward it.
    #[test]
    fn adversarial_steps_reduce_frechet_distance() {
        use crate::evaluation::fgd;
        use crate::nn::{randn, Optimizer, ParamStore};
        use crate::training::critic::Critic;
        let dim = 8 * 2 * 3;
        let pattern: Vec<f64> = (0..dim)
            .map(|i| {
                let (t, j, a) = (i / 6, (i / 3) % 2, i % 3);
                let phase = t as f64 * 0.5 + j as f64;
                [phase.sin(), phase.cos(), 0.5][a] * if j == 0 { 1.0 } else { 0.6 }
            })
            .collect();
        let mut rng = seeded(11);
        let real = |n: usize, rng: &mut crate::nn::Rng64| -> Tensor {
            let noise = randn(&[n, dim], DType::F64, rng).unwrap();
            (noise * 0.1).unwrap().broadcast_add(&Tensor::from_slice(&pattern, dim, &Device::Cpu).unwrap()).unwrap()
        };
        let mut gen_store = ParamStore::new(DType::F64);
        let mu = gen_store.zeros("g.mu", &[dim]).unwrap();
        let log_s = gen_store.zeros("g.log_s", &[dim]).unwrap();
        let fake = |n: usize, rng: &mut crate::nn::Rng64| -> Tensor {
            let z = randn(&[n, dim], DType::F64, rng).unwrap();
            z.broadcast_mul(&log_s.exp().unwrap()).unwrap().broadcast_add(&mu).unwrap()
        };
        let rows = |t: &Tensor| -> Vec<Vec<f64>> { t.to_vec2::<f64>().unwrap() };
        let fd = |rng: &mut crate::nn::Rng64| fgd(&rows(&real(400, rng)), &rows(&fake(400, rng).detach())).unwrap();
        let before = fd(&mut seeded(99));
        let mut critic_store = ParamStore::new(DType::F64);
        let critic = Critic::new(&mut critic_store, "c", dim, 64, &mut rng).unwrap();
        let mut d_opt = Optimizer::adam(critic_store.vars(), 2e-3).unwrap();
        let mut g_opt = Optimizer::adam(gen_store.vars(), 2e-2).unwrap();
        for _ in 0..200 {
            let (x_real, x_fake) = (real(64, &mut rng), fake(64, &mut rng));
            let eps = Tensor::from_vec((0..64).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(), (64, 1), &Device::Cpu).unwrap();
            let mix = (x_real.broadcast_mul(&eps).unwrap() + x_fake.detach().broadcast_mul(&eps.affine(-1.0, 1.0).unwrap()).unwrap()).unwrap();
            let (d, _) = wgan_div_losses(
                &critic.score(&x_real).unwrap(),
                &critic.score(&x_fake.detach()).unwrap(),
                &critic.input_grad_norm(&mix).unwrap(),
                2.0,
                6.0,
            )
            .unwrap();
            d_opt.backward_step(&d).unwrap();
            let g = critic.score(&x_fake).unwrap().mean_all().unwrap().neg().unwrap();
            g_opt.backward_step(&g).unwrap();
        }
        let after = fd(&mut seeded(99));
        assert!(after < before, "Fréchet distance {before} -> {after}");
    }
}
