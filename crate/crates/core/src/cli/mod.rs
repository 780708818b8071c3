//! The `gesture` command line.
//!
//! Exit codes: 0 on success, 1 on a domain error (one line on stderr naming the offending path),
//! 2 on a usage error.

pub mod corpus;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::apn::train_apn;
use crate::codec::{train_codec, MotionCodec};
use crate::conditioning::LatentMode;
use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_run, evaluate, feature_sweep, AblationConfig, EmbedConfig, EmbeddingNet, EvalConfig, SweepConfig, Variant,
};
use crate::features::{feature_timeline, AnnotationDoc, FeatureSchema, GroupLexicon};
use crate::generator::{generate, ModelBundle, Utterance};
use crate::manifest::{config_hash, RunManifest};
use crate::motion::synth::synth_corpus;
use crate::motion::{read_pose_sequence, write_pose_sequence, GenerationConfig, PoseSequence};
use crate::pipeline::{split, PipelineConfig};
use crate::render::{render_sequence, RenderConfig};
use crate::training::{train, TrainOptions};

/// Everything a command can read from `--config`. Command-line flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub pipeline: PipelineConfig,
    pub embed: EmbedConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub generation: GenerationConfig,
    pub render: RenderConfig,
    pub ablation_seeds: Option<Vec<u64>>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "gesture", version, about = "Label-guided co-speech gesture synthesis")]
pub struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Deterministic,
    Sample,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with a train/val/test split.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Per-frame feature timeline from an annotation document.
    ExtractFeatures {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15.0)]
        fps: f64,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train the motion codec into `<out>/codec`.
    TrainCodec {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the prediction network into `<model>/apn`.
    TrainApn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the generator into `<model>/generator`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Hide every feature label from the generator.
        #[arg(long)]
        no_features: bool,
        /// Ignore `<model>/apn` even when present.
        #[arg(long)]
        no_apn: bool,
    },
    /// Train the evaluation embedding net on the training split.
    TrainEmbed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Synthesize motion for an utterance JSON.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        utterance: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Deterministic)]
        mode: Mode,
    },
    /// Print a JSON metric report comparing generated and reference motion.
    Evaluate {
        #[arg(long = "gen", required = true, num_args = 1..)]
        generated: Vec<PathBuf>,
        #[arg(long = "ref", required = true, num_args = 1..)]
        reference: Vec<PathBuf>,
        #[arg(long)]
        embed: PathBuf,
    },
    /// Substitution sweep over the labeled test clips of a corpus.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        slots: Option<Vec<usize>>,
    },
    /// Retrain every ablation variant over several seeds.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Stick-figure PNG frames of a motion file.
    Render {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<u32>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // no environment lookup: logging is configured by flags only
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            1
        }
    }
}

/// Error text that names `path` unless it already does.
fn at<T>(path: &Path, r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| {
        let msg = e.to_string();
        let shown = path.display().to_string();
        if msg.contains(&shown) {
            msg
        } else {
            format!("{shown}: {msg}")
        }
    })
}

/// Creates the directory a file output goes into.
fn parent_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn finish(mut manifest: RunManifest, started: Instant, path: &Path) -> std::result::Result<(), String> {
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    at(path, manifest.write(path))
}

fn add_inputs(m: &mut RunManifest, paths: &[&Path]) -> std::result::Result<(), String> {
    for p in paths {
        at(p, m.add_input(p))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> std::result::Result<(), String> {
    let started = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => at(p, CliConfig::load(p))?,
        None => CliConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    let pc = cfg.pipeline.with_seed(seed);
    match &cli.command {
        Command::SynthData { out, count } => {
            let mut corpus = pc.corpus.clone();
            if let Some(n) = count {
                corpus.sequence_count = *n;
            }
            let ds = at(out, synth_corpus(&corpus, seed))?;
            let sp = at(out, split(ds.samples.len(), pc.val_fraction, pc.test_fraction))?;
            at(out, corpus::write_corpus(&ds, &sp, out))?;
            let m = RunManifest::new("synth-data", config_hash(&corpus), seed);
            finish(m, started, &out.join("run_manifest.json"))
        }
        Command::ExtractFeatures { annotation, out, fps, schema: schema_file, lexicon: lexicon_file } => {
            let doc = at(annotation, AnnotationDoc::load(annotation))?;
            let schema = match schema_file {
                Some(p) => at(p, FeatureSchema::load(p))?,
                None => FeatureSchema::default(),
            };
            let lex = match lexicon_file {
                Some(p) => at(p, GroupLexicon::load(p))?,
                None => GroupLexicon::default(),
            };
            let ex = at(annotation, feature_timeline(&doc, &schema, &lex, *fps))?;
            at(out, parent_dir(out))?;
            at(out, ex.timeline.save(out))?;
            let mut m = RunManifest::new("extract-features", config_hash(&(fps, &schema, &lex)), seed);
            let inputs: Vec<&Path> =
                [Some(annotation.as_path()), schema_file.as_deref(), lexicon_file.as_deref()].into_iter().flatten().collect();
            add_inputs(&mut m, &inputs)?;
            finish(m, started, &sibling(out, "manifest.json"))
        }
        Command::TrainCodec { data, out, epochs } => {
            let mut c = pc.codec.clone();
            if let Some(e) = epochs {
                c.epochs = *e;
            }
            let samples = at(data, corpus::load_split(data, Some("train")))?;
            let motion: Vec<&PoseSequence> = samples.iter().map(|s| &s.motion).collect();
            let Some(first) = motion.first() else {
                return Err(format!("{}: no training clips", data.display()));
            };
            let (codec, report, manifest) = at(data, train_codec(&motion, first.skeleton().clone(), &c))?;
            log::info!("codec reconstruction {:.5}", report.final_reconstruction());
            at(out, codec.save(&out.join("codec"), &manifest))?;
            let mut m = RunManifest::new("train-codec", config_hash(&c), seed);
            add_inputs(&mut m, &[&data.join("corpus.json")])?;
            finish(m, started, &out.join("codec").join("run_manifest.json"))
        }
        Command::TrainApn { data, model, epochs } => {
            let mut c = pc.apn.clone();
            if let Some(e) = epochs {
                c.epochs = *e;
            }
            let (codec, _) = at(model, MotionCodec::load(&model.join("codec")))?;
            let samples = at(data, corpus::load_split(data, Some("train")))?;
            let labeled = corpus::labeled(&samples);
            let (apn, _, manifest) = at(data, train_apn(&labeled, &codec, &FeatureSchema::default(), &c))?;
            at(model, apn.save(&model.join("apn"), &manifest))?;
            let mut m = RunManifest::new("train-apn", config_hash(&c), seed);
            add_inputs(&mut m, &[&data.join("corpus.json"), &model.join("codec")])?;
            finish(m, started, &model.join("apn").join("run_manifest.json"))
        }
        Command::Train { data, model, epochs, no_features, no_apn } => {
            let mut t = pc.train.clone();
            if let Some(e) = epochs {
                t.max_epochs = *e;
            }
            let (codec, _) = at(model, MotionCodec::load(&model.join("codec")))?;
            let schema = FeatureSchema::default();
            let apn = if *no_apn || !model.join("apn").join("apn.json").exists() {
                None
            } else {
                Some(at(model, crate::apn::ApnModel::load(&model.join("apn"), &schema))?.0)
            };
            let load = |s: &str| -> std::result::Result<Vec<_>, String> {
                Ok(at(data, corpus::load_split(data, Some(s)))?.iter().map(|s| s.to_train()).collect())
            };
            let (train_set, val_set) = (load("train")?, load("val")?);
            let options = TrainOptions { force_missing_labels: *no_features };
            let outcome = at(data, train(&train_set, &val_set, &codec, apn.as_ref(), &pc.generator, &t, options))?;
            at(model, outcome.save(model))?;
            let mut m = RunManifest::new("train", config_hash(&(&pc.generator, &t, options)), seed);
            add_inputs(&mut m, &[&data.join("corpus.json"), &model.join("codec")])?;
            finish(m, started, &model.join("generator").join("run_manifest.json"))
        }
        Command::TrainEmbed { data, out, epochs } => {
            let mut c = EmbedConfig { seed, ..cfg.embed.clone() };
            if let Some(e) = epochs {
                c.epochs = *e;
            }
            let samples = at(data, corpus::load_split(data, Some("train")))?;
            let motion: Vec<&PoseSequence> = samples.iter().map(|s| &s.motion).collect();
            let (net, manifest) = at(data, EmbeddingNet::train(&motion, &c))?;
            at(out, net.save(out, &manifest, motion[0].skeleton()))?;
            let mut m = RunManifest::new("train-embed", config_hash(&c), seed);
            add_inputs(&mut m, &[&data.join("corpus.json")])?;
            finish(m, started, &out.join("run_manifest.json"))
        }
        Command::Generate { model, utterance, out, mode } => {
            let bundle = at(model, ModelBundle::load(model))?;
            let utt = at(utterance, Utterance::load(utterance))?;
            let mode = match mode {
                Mode::Deterministic => LatentMode::Deterministic,
                Mode::Sample => LatentMode::Sample,
            };
            let seq = at(utterance, generate(&utt, &cfg.generation, &bundle, mode, seed))?;
            at(out, parent_dir(out))?;
            at(out, write_pose_sequence(&seq, out))?;
            let mut m = RunManifest::new("generate", config_hash(&(&cfg.generation, mode)), seed);
            add_inputs(&mut m, &[utterance, &model.join("generator")])?;
            finish(m, started, &sibling(out, "manifest.json"))
        }
        Command::Evaluate { generated, reference, embed } => {
            let (net, _) = at(embed, EmbeddingNet::load(embed))?;
            let read = |ps: &[PathBuf]| -> std::result::Result<Vec<PoseSequence>, String> {
                ps.iter().map(|p| at(p, read_pose_sequence(p))).collect()
            };
            let (g, r) = (read(generated)?, read(reference)?);
            let gr: Vec<&PoseSequence> = g.iter().collect();
            let rr: Vec<&PoseSequence> = r.iter().collect();
            let ec = EvalConfig { seed, ..cfg.eval.clone() };
            let report = at(&generated[0], evaluate(&gr, &rr, &net, &ec))?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            Ok(())
        }
        Command::Sweep { model, data, out, slots } => {
            let bundle = at(model, ModelBundle::load(model))?;
            let test = at(data, corpus::load_split(data, Some("test")))?;
            let utts: Vec<Utterance> = test.into_iter().filter(|s| s.utterance.timeline.is_some()).map(|s| s.utterance).collect();
            let mut sc = SweepConfig { seed, ..cfg.sweep.clone() };
            if let Some(s) = slots {
                sc.slots = s.clone();
            }
            let report = at(data, feature_sweep(&bundle, &utts, &cfg.generation, &sc))?;
            at(out, report.write(out))?;
            let mut m = RunManifest::new("sweep", config_hash(&(&sc, &cfg.generation)), seed);
            add_inputs(&mut m, &[&data.join("corpus.json"), &model.join("generator")])?;
            finish(m, started, &out.join("run_manifest.json"))
        }
        Command::Ablate { out, seeds, epochs } => {
            let mut ac = AblationConfig {
                pipeline: cfg.pipeline.clone(),
                seeds: cfg.ablation_seeds.clone().unwrap_or_else(|| vec![seed, seed + 1, seed + 2]),
                embed: cfg.embed.clone(),
                eval: cfg.eval.clone(),
                generation: cfg.generation,
            };
            if let Some(s) = seeds {
                ac.seeds = s.clone();
            }
            if let Some(e) = epochs {
                ac.pipeline.train.max_epochs = *e;
            }
            let table = at(out, ablation_run(&ac, &Variant::ALL))?;
            at(out, table.write(out))?;
            print!("{}", table.to_markdown());
            let m = RunManifest::new("ablate", config_hash(&ac), seed);
            finish(m, started, &out.join("run_manifest.json"))
        }
        Command::Render { motion, out, size } => {
            let seq = at(motion, read_pose_sequence(motion))?;
            let mut rc = cfg.render.clone();
            if let Some(s) = size {
                rc.width = *s;
                rc.height = *s;
            }
            at(out, render_sequence(&seq, out, &rc))?;
            let mut m = RunManifest::new("render", config_hash(&rc), seed);
            add_inputs(&mut m, &[motion])?;
            finish(m, started, &out.join("run_manifest.json"))
        }
    }
}

/// `<file>.<suffix>` next to an output file.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["gesture"]), 2);
        assert_eq!(run(["gesture", "frobnicate"]), 2);
        assert_eq!(run(["gesture", "render", "--motion"]), 2);
        assert_eq!(run(["gesture", "--help"]), 0);
    }

    #[test]
    fn domain_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.gpsq");
        let out = dir.path().join("frames");
        let code = run(["gesture", "render", "--motion", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn config_and_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "seed = 5\n[render]\nwidth = 32\nheight = 32\n").unwrap();
        let c = CliConfig::load(&cfg).unwrap();
        assert_eq!(c.seed, Some(5));
        assert_eq!(c.render.width, 32);
        std::fs::write(&cfg, "render = 3\n").unwrap();
        assert!(CliConfig::load(&cfg).is_err());
    }
}
