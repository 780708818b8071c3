//! End-to-end toy training: corpus, codec, label predictor, then the adversarial generator.

use gesture_synth::pipeline::{run_pipeline, PipelineConfig};
use gesture_synth::training::TrainOptions;

fn main() -> gesture_synth::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.sequence_count = 60;
    cfg.codec.epochs = 10;
    cfg.train.max_epochs = 6;
    let run = run_pipeline(&cfg, TrainOptions::default())?;
    for e in &run.outcome.history.epochs {
        println!(
            "epoch {} d {:.4} g {:.4} reg {:.4} val {:.4} dropout {:.2}",
            e.epoch, e.d_loss, e.g_loss, e.reg_loss, e.val_loss_mean, e.dropout_p
        );
    }
    println!("best epoch {} (val {:.4})", run.outcome.best_epoch, run.outcome.best_val);
    let dir = std::env::temp_dir().join("gesture-example-model");
    run.save(&dir)?;
    println!("checkpoint in {}", dir.display());
    Ok(())
}
