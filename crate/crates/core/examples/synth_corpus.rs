//! Synthesizes a small labelled corpus and writes it to disk in the CLI layout.

use gesture_synth::cli::corpus::write_corpus;
use gesture_synth::motion::synth::{synth_corpus, CorpusSpec};
use gesture_synth::pipeline::split;

fn main() -> gesture_synth::Result<()> {
    let spec = CorpusSpec { sequence_count: 12, duration_range: (4.0, 6.0), ..CorpusSpec::default() };
    let ds = synth_corpus(&spec, 0)?;
    let sp = split(ds.samples.len(), 0.2, 0.2)?;
    let dir = std::env::temp_dir().join("gesture-example-corpus");
    let index = write_corpus(&ds, &sp, &dir)?;
    for e in &index.samples {
        println!("{} {:5} {:11} speaker {}", e.id, e.split, e.dataset, e.speaker);
    }
    println!("wrote {} clips to {}", index.samples.len(), dir.display());
    Ok(())
}
