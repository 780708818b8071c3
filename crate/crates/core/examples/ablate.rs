//! Ablation table over the four variants for one seed on a reduced corpus.

use gesture_synth::evaluation::{ablation_run, AblationConfig, Variant};

fn main() -> gesture_synth::Result<()> {
    let mut cfg = AblationConfig { seeds: vec![0], ..AblationConfig::default() };
    cfg.pipeline.corpus.sequence_count = 80;
    cfg.pipeline.codec.epochs = 10;
    cfg.pipeline.train.max_epochs = 6;
    let table = ablation_run(&cfg, &Variant::ALL)?;
    print!("{}", table.to_markdown());
    let dir = std::env::temp_dir().join("gesture-example-ablation");
    table.write(&dir)?;
    println!("tables in {}", dir.display());
    Ok(())
}
