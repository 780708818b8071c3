//! Generates motion for a labelled utterance, then again with left and right hand labels swapped.
//! The wrist that moves more should follow the labels.

use gesture_synth::conditioning::LatentMode;
use gesture_synth::generator::{generate, Utterance};
use gesture_synth::motion::GenerationConfig;
use gesture_synth::pipeline::{run_pipeline, PipelineConfig};
use gesture_synth::training::TrainOptions;

fn main() -> gesture_synth::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.sequence_count = 80;
    cfg.codec.epochs = 10;
    cfg.train.max_epochs = 8;
    let run = run_pipeline(&cfg, TrainOptions::default())?;
    let bundle = run.bundle();
    let sk = run.dataset.schema.clone();
    let skeleton = cfg.corpus.skeleton.clone();
    let (lw, rw) = (skeleton.find("l_wrist").expect("joint"), skeleton.find("r_wrist").expect("joint"));
    let gen = GenerationConfig::default();
    for s in run.test_samples().into_iter().filter(|s| s.annotated()).take(5) {
        let utt = Utterance::from_sample(s, true)?;
        let base = generate(&utt, &gen, &bundle, LatentMode::Deterministic, 0)?;
        let mut swapped = utt.clone();
        swapped.timeline = utt.timeline.as_ref().map(|t| t.swap_hands(&sk));
        let other = generate(&swapped, &gen, &bundle, LatentMode::Deterministic, 0)?;
        println!(
            "{}: truth L {:.2} R {:.2} | generated L {:.2} R {:.2} | swapped L {:.2} R {:.2}",
            s.id,
            s.motion.path_length(lw),
            s.motion.path_length(rw),
            base.path_length(lw),
            base.path_length(rw),
            other.path_length(lw),
            other.path_length(rw)
        );
    }
    Ok(())
}
