//! FGD, Diversity and MAJE of perturbed motion against ground truth, through a trained
//! embedding net.

use gesture_synth::evaluation::{evaluate, EmbedConfig, EmbeddingNet, EvalConfig};
use gesture_synth::motion::synth::{synth_corpus, CorpusSpec};
use gesture_synth::motion::PoseSequence;

fn main() -> gesture_synth::Result<()> {
    let spec = CorpusSpec { sequence_count: 40, ..CorpusSpec::default() };
    let ds = synth_corpus(&spec, 0)?;
    let (train, test) = ds.samples.split_at(30);
    let motion: Vec<&PoseSequence> = train.iter().map(|s| &s.motion).collect();
    let (net, manifest) = EmbeddingNet::train(&motion, &EmbedConfig { epochs: 10, ..EmbedConfig::default() })?;
    println!("embedding loss {:.4} -> {:.4}", manifest.loss_trace[0], manifest.loss_trace[manifest.loss_trace.len() - 1]);
    let truth: Vec<&PoseSequence> = test.iter().map(|s| &s.motion).collect();
    let still: Vec<PoseSequence> = truth
        .iter()
        .map(|s| PoseSequence::rest(s.skeleton().clone(), s.fps(), s.frame_count()))
        .collect::<Result<_, _>>()?;
    let noisy: Vec<PoseSequence> = truth
        .iter()
        .map(|s| PoseSequence::new(s.skeleton().clone(), s.fps(), s.frames() * 1.3))
        .collect::<Result<_, _>>()?;
    let cfg = EvalConfig::default();
    for (name, set) in [("ground truth", truth.clone()), ("scaled 1.3x", noisy.iter().collect()), ("rest pose", still.iter().collect())] {
        let m = evaluate(&set, &truth, &net, &cfg)?;
        println!("{name:>12}: FGD {:.4} Diversity {:.4} MAJE {:?}", m.fgd, m.diversity, m.maje);
    }
    Ok(())
}
