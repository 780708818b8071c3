//! Trains the vector-quantized motion codec and round-trips a clip through code IDs.

use gesture_synth::codec::{train_codec, CodecConfig};
use gesture_synth::motion::synth::{synth_corpus, CorpusSpec};
use gesture_synth::motion::PoseSequence;

fn main() -> gesture_synth::Result<()> {
    let spec = CorpusSpec { sequence_count: 20, duration_range: (4.0, 6.0), ..CorpusSpec::default() };
    let ds = synth_corpus(&spec, 0)?;
    let motion: Vec<&PoseSequence> = ds.samples.iter().map(|s| &s.motion).collect();
    let cfg = CodecConfig { epochs: 5, ..CodecConfig::default() };
    let (codec, report, _) = train_codec(&motion, spec.skeleton.clone(), &cfg)?;
    println!("reconstruction {:.5} -> {:.5}, codebook use {:.2}", report.initial_reconstruction, report.final_reconstruction(), report.utilization);
    let window = motion[0].frames().slice(ndarray::s![0..4, .., ..]);
    let codes = codec.encode(window)?;
    let back = codec.decode(&codes)?;
    let err = (&back - &window).mapv(f32::abs).mean().unwrap_or(0.0);
    println!("codes {:?}, mean abs error {err:.4} m", codes);
    Ok(())
}
