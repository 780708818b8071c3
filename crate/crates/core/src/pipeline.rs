//! End-to-end toy run on the synthetic corpus: corpus -> codec -> aPN -> generator.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::apn::{train_apn, ApnConfig, ApnManifest, ApnModel};
use crate::codec::{train_codec, CodecConfig, CodecManifest, MotionCodec};
use crate::error::{Error, Result};
use crate::features::FeatureTimeline;
use crate::generator::{BlendAligner, EncoderRegistry, GeneratorConfig, ModelBundle};
use crate::motion::synth::{synth_corpus, CorpusSpec, SynthDataset, SynthSample};
use crate::motion::PoseSequence;
use crate::training::{train, TrainConfig, TrainOptions, TrainOutcome, TrainSample};

/// Every knob of a toy run. `seed` overrides the seeds of the parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    /// Fractions of the corpus used for validation and test; the rest trains.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub codec: CodecConfig,
    pub apn: ApnConfig,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            corpus: CorpusSpec::default(),
            val_fraction: 0.15,
            test_fraction: 0.15,
            codec: CodecConfig::default(),
            apn: ApnConfig::default(),
            generator: GeneratorConfig { width: 64, ..GeneratorConfig::default() },
            train: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 30,
                patience: 8,
                ..TrainConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    /// Same configuration with every part seeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.codec.seed = seed;
        c.apn.seed = seed;
        c.generator.seed = seed;
        c.train.seed = seed;
        c
    }
}

/// Index split of the corpus: every k-th sample goes to validation or test so both keep the
/// annotated/unannotated mix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n: usize, val_fraction: f64, test_fraction: f64) -> Result<Split> {
    if !(val_fraction > 0.0 && test_fraction > 0.0 && val_fraction + test_fraction < 1.0) {
        return Err(Error::Config("val_fraction and test_fraction must be positive and sum below 1".into()));
    }
    let mut s = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let (mut v, mut t) = (0.0, 0.0);
    for i in 0..n {
        v += val_fraction;
        t += test_fraction;
        if v >= 1.0 {
            v -= 1.0;
            s.val.push(i);
        } else if t >= 1.0 {
            t -= 1.0;
            s.test.push(i);
        } else {
            s.train.push(i);
        }
    }
    if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(Error::invalid(format!("corpus of {n} sequences is too small to split")));
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct Stages {
    pub codec: MotionCodec,
    pub codec_manifest: CodecManifest,
    pub apn: ApnModel,
    pub apn_manifest: ApnManifest,
    pub apn_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub dataset: SynthDataset,
    pub split: Split,
    pub stages: Stages,
    pub outcome: TrainOutcome,
    pub seconds: [f64; 4],
}

impl PipelineRun {
    pub fn bundle(&self) -> ModelBundle {
        ModelBundle {
            schema: self.dataset.schema.clone(),
            codec: self.stages.codec.clone(),
            apn: Some(self.stages.apn.clone()),
            generator: self.outcome.model.clone(),
            registry: EncoderRegistry::default(),
            aligner: std::sync::Arc::new(BlendAligner),
        }
    }

    pub fn test_samples(&self) -> Vec<&SynthSample> {
        self.split.test.iter().map(|&i| &self.dataset.samples[i]).collect()
    }

    /// Writes `codec/`, `apn/`, `generator/` and `history.csv`, loadable with
    /// [`ModelBundle::load`].
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.stages.codec.save(&dir.join("codec"), &self.stages.codec_manifest)?;
        self.stages.apn.save(&dir.join("apn"), &self.stages.apn_manifest)?;
        self.outcome.save(dir)
    }
}

pub fn samples_of(dataset: &SynthDataset, idx: &[usize]) -> Result<Vec<TrainSample>> {
    idx.iter().map(|&i| TrainSample::from_synth(&dataset.samples[i])).collect()
}

/// Codec on all training motion, aPN on the annotated training clips.
pub fn train_stages(cfg: &PipelineConfig, dataset: &SynthDataset, split: &Split) -> Result<Stages> {
    let motion: Vec<&PoseSequence> = split.train.iter().map(|&i| &dataset.samples[i].motion).collect();
    let (codec, report, codec_manifest) = train_codec(&motion, cfg.corpus.skeleton.clone(), &cfg.codec)?;
    log::info!("codec reconstruction {:.5} -> {:.5}", report.initial_reconstruction, report.final_reconstruction());
    let labeled: Vec<(&PoseSequence, &FeatureTimeline)> = split
        .train
        .iter()
        .filter_map(|&i| dataset.samples[i].timeline.as_ref().map(|t| (&dataset.samples[i].motion, t)))
        .collect();
    let (apn, apn_loss, apn_manifest) = train_apn(&labeled, &codec, &dataset.schema, &cfg.apn)?;
    Ok(Stages { codec, codec_manifest, apn, apn_manifest, apn_loss })
}

/// The whole toy run with the generator trained under `options`.
pub fn run_pipeline(cfg: &PipelineConfig, options: TrainOptions) -> Result<PipelineRun> {
    let t0 = Instant::now();
    let dataset = synth_corpus(&cfg.corpus, cfg.seed)?;
    let split = split(dataset.samples.len(), cfg.val_fraction, cfg.test_fraction)?;
    let t1 = Instant::now();
    let stages = train_stages(cfg, &dataset, &split)?;
    let t2 = Instant::now();
    let outcome = train_generator(cfg, &dataset, &split, &stages, true, options)?;
    let t3 = Instant::now();
    let secs = |a: Instant, b: Instant| (b - a).as_secs_f64();
    Ok(PipelineRun {
        config: cfg.clone(),
        dataset,
        split,
        stages,
        outcome,
        seconds: [secs(t0, t1), secs(t1, t2), secs(t2, t3), secs(t0, t3)],
    })
}

/// Generator training on the split; `use_apn = false` leaves seed predictions out.
pub fn train_generator(
    cfg: &PipelineConfig,
    dataset: &SynthDataset,
    split: &Split,
    stages: &Stages,
    use_apn: bool,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    let train_set = samples_of(dataset, &split.train)?;
    let val_set = samples_of(dataset, &split.val)?;
    train(
        &train_set,
        &val_set,
        &stages.codec,
        use_apn.then_some(&stages.apn),
        &cfg.generator,
        &cfg.train,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_fractions() {
        let s = split(200, 0.15, 0.15).unwrap();
        assert_eq!(s.val.len(), 30);
        assert_eq!(s.test.len() + s.val.len() + s.train.len(), 200);
        assert!((29..=31).contains(&s.test.len()));
        assert!(split(3, 0.1, 0.1).is_err());
    }
}
