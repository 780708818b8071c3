//! Retrains the generator with feature labels and/or seed predictions removed and compares the
//! variants on the held-out clips.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, EmbedConfig, EmbeddingNet, EvalConfig};
use crate::conditioning::LatentMode;
use crate::error::{Error, Result};
use crate::generator::{generate, BlendAligner, EncoderRegistry, ModelBundle, Utterance};
use crate::motion::synth::synth_corpus;
use crate::motion::{GenerationConfig, PoseSequence};
use crate::pipeline::{split, train_generator, train_stages, PipelineConfig};
use crate::training::TrainOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoFeatures,
    NoApn,
    NoFeaturesNoApn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoFeatures, Variant::NoApn, Variant::NoFeaturesNoApn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFeatures => "no_features",
            Variant::NoApn => "no_apn",
            Variant::NoFeaturesNoApn => "no_features_no_apn",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Variant::Full | Variant::NoApn)
    }

    pub fn uses_apn(self) -> bool {
        matches!(self, Variant::Full | Variant::NoFeatures)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub embed: EmbedConfig,
    pub eval: EvalConfig,
    pub generation: GenerationConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            pipeline: PipelineConfig::default(),
            seeds: vec![0, 1, 2],
            embed: EmbedConfig::default(),
            eval: EvalConfig::default(),
            generation: GenerationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    /// A variant name or `ground_truth`.
    pub variant: String,
    pub fgd: f64,
    pub diversity: f64,
    pub maje: f64,
    pub best_epoch: Option<usize>,
    pub conditioning_input_max_abs: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Generated motion for every test clip; labels reach the generator only for annotated clips and
/// only when the variant keeps features.
fn generate_test(
    bundle: &ModelBundle,
    tests: &[&crate::motion::synth::SynthSample],
    variant: Variant,
    gen: &GenerationConfig,
    seed: u64,
) -> Result<Vec<PoseSequence>> {
    tests
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let u = Utterance::from_sample(s, variant.uses_features() && s.annotated())?;
            generate(&u, gen, bundle, LatentMode::Sample, seed.wrapping_mul(1000).wrapping_add(i as u64))
        })
        .collect()
}

pub fn ablation_run(cfg: &AblationConfig, variants: &[Variant]) -> Result<AblationTable> {
    if cfg.seeds.is_empty() || variants.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed and one variant"));
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let pc = cfg.pipeline.with_seed(seed);
        let dataset = synth_corpus(&pc.corpus, seed)?;
        let sp = split(dataset.samples.len(), pc.val_fraction, pc.test_fraction)?;
        let stages = train_stages(&pc, &dataset, &sp)?;
        let train_motion: Vec<&PoseSequence> = sp.train.iter().map(|&i| &dataset.samples[i].motion).collect();
        let embed_cfg = EmbedConfig { seed, ..cfg.embed.clone() };
        let (net, _) = EmbeddingNet::train(&train_motion, &embed_cfg)?;
        let tests: Vec<_> = sp.test.iter().map(|&i| &dataset.samples[i]).collect();
        let truth: Vec<&PoseSequence> = tests.iter().map(|s| &s.motion).collect();
        let eval_cfg = EvalConfig { seed, ..cfg.eval.clone() };
        let gt = evaluate(&truth, &truth, &net, &eval_cfg)?;
        rows.push(AblationRow {
            seed,
            variant: "ground_truth".into(),
            fgd: gt.fgd,
            diversity: gt.diversity,
            maje: gt.maje.unwrap_or(0.0),
            best_epoch: None,
            conditioning_input_max_abs: None,
        });
        for &v in variants {
            let options = TrainOptions { force_missing_labels: !v.uses_features() };
            let outcome = train_generator(&pc, &dataset, &sp, &stages, v.uses_apn(), options)?;
            if !v.uses_features() && outcome.conditioning_input_max_abs != 0.0 {
                return Err(Error::invalid(format!("{} saw nonzero conditioning input", v.name())));
            }
            let bundle = ModelBundle {
                schema: dataset.schema.clone(),
                codec: stages.codec.clone(),
                apn: v.uses_apn().then(|| stages.apn.clone()),
                generator: outcome.model.clone(),
                registry: EncoderRegistry::default(),
                aligner: std::sync::Arc::new(BlendAligner),
            };
            let generated = generate_test(&bundle, &tests, v, &cfg.generation, seed)?;
            let refs: Vec<&PoseSequence> = generated.iter().collect();
            let m = evaluate(&refs, &truth, &net, &eval_cfg)?;
            log::info!("seed {seed} {}: fgd {:.4} div {:.4} maje {:?}", v.name(), m.fgd, m.diversity, m.maje);
            rows.push(AblationRow {
                seed,
                variant: v.name().into(),
                fgd: m.fgd,
                diversity: m.diversity,
                maje: m.maje.unwrap_or(f64::NAN),
                best_epoch: Some(outcome.best_epoch),
                conditioning_input_max_abs: Some(outcome.conditioning_input_max_abs),
            });
        }
    }
    Ok(AblationTable { rows })
}

impl AblationTable {
    pub fn get(&self, seed: u64, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.seed == seed && r.variant == variant)
    }

    fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    /// Mean and sample standard deviation over seeds per variant and metric.
    pub fn summary(&self) -> Vec<(String, [(f64, f64); 3])> {
        self.variants()
            .into_iter()
            .map(|v| {
                let rs: Vec<&AblationRow> = self.rows.iter().filter(|r| r.variant == v).collect();
                let stat = |f: &dyn Fn(&AblationRow) -> f64| {
                    let xs: Vec<f64> = rs.iter().map(|r| f(r)).collect();
                    super::mean_var(&xs)
                };
                let ms = [stat(&|r| r.fgd), stat(&|r| r.diversity), stat(&|r| r.maje)];
                (v, ms.map(|(m, var)| (m, var.sqrt())))
            })
            .collect()
    }

    /// Markdown table of mean ± std over seeds.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | FGD | Diversity | MAJE |\n|---|---|---|---|\n");
        for (v, ms) in self.summary() {
            let _ = writeln!(
                s,
                "| {v} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                ms[0].0, ms[0].1, ms[1].0, ms[1].1, ms[2].0, ms[2].1
            );
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "variant", "fgd", "diversity", "maje", "best_epoch", "conditioning_input_max_abs"])?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.variant.clone(),
                format!("{:.6e}", r.fgd),
                format!("{:.6e}", r.diversity),
                format!("{:.6e}", r.maje),
                r.best_epoch.map_or(String::new(), |e| e.to_string()),
                r.conditioning_input_max_abs.map_or(String::new(), |e| e.to_string()),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// `ablation.json`, `ablation.csv` and `ablation.md` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("ablation.json", serde_json::to_string_pretty(self)?),
            ("ablation.csv", self.to_csv()?),
            ("ablation.md", self.to_markdown()),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
