//! Renders a synthetic clip as stick-figure PNG frames.

use gesture_synth::motion::synth::{synth_corpus, CorpusSpec};
use gesture_synth::render::{render_sequence, RenderConfig};

fn main() -> gesture_synth::Result<()> {
    let spec = CorpusSpec { sequence_count: 1, duration_range: (2.0, 2.0), ..CorpusSpec::default() };
    let ds = synth_corpus(&spec, 0)?;
    let dir = std::env::temp_dir().join("gesture-example-frames");
    let meta = render_sequence(&ds.samples[0].motion, &dir, &RenderConfig::default())?;
    println!("{} frames ({:.1} s at {} fps) in {}", meta.frames, meta.duration_s, meta.fps, dir.display());
    Ok(())
}
