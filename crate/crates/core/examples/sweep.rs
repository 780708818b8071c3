//! Substitution sweep on a toy model: each right-wrist value is forced onto the labelled frames
//! and the change in motion is tested against the unmodified output.

use gesture_synth::evaluation::{feature_sweep, SweepConfig, HANDEDNESS_SLOT};
use gesture_synth::generator::Utterance;
use gesture_synth::motion::GenerationConfig;
use gesture_synth::pipeline::{run_pipeline, PipelineConfig};
use gesture_synth::training::TrainOptions;

fn main() -> gesture_synth::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.sequence_count = 80;
    cfg.codec.epochs = 10;
    cfg.train.max_epochs = 8;
    let run = run_pipeline(&cfg, TrainOptions::default())?;
    let utts: Vec<Utterance> = run
        .test_samples()
        .into_iter()
        .filter(|s| s.annotated())
        .map(|s| Utterance::from_sample(s, true))
        .collect::<Result<_, _>>()?;
    let slot = run.dataset.schema.slot_index(HANDEDNESS_SLOT).expect("slot exists");
    let report = feature_sweep(&run.bundle(), &utts, &GenerationConfig::default(), &SweepConfig { slots: vec![slot], ..SweepConfig::default() })?;
    for r in &report.rows {
        println!("{:>22} -> {:<10} mean L1 {:.4} CI [{:.4}, {:.4}] p {:.4}", r.slot_name, r.value_name, r.mean, r.ci_low, r.ci_high, r.p_value);
    }
    let dir = std::env::temp_dir().join("gesture-example-sweep");
    report.write(&dir)?;
    println!("report and plot in {}", dir.display());
    Ok(())
}
