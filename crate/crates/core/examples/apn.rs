//! Trains the seed-frame label predictor and reports held-out accuracy on the right wrist slot.

use gesture_synth::apn::{apn_accuracy, infer_seed_features, train_apn, ApnConfig};
use gesture_synth::codec::{train_codec, CodecConfig};
use gesture_synth::evaluation::HANDEDNESS_SLOT;
use gesture_synth::features::FeatureTimeline;
use gesture_synth::motion::synth::{synth_corpus, CorpusSpec, SynthSample};
use gesture_synth::motion::PoseSequence;

fn labeled(xs: &[SynthSample]) -> Vec<(&PoseSequence, &FeatureTimeline)> {
    xs.iter().filter_map(|s| s.timeline.as_ref().map(|t| (&s.motion, t))).collect()
}

fn main() -> gesture_synth::Result<()> {
    let spec = CorpusSpec { sequence_count: 60, duration_range: (6.0, 9.0), annotated_fraction: 1.0, ..CorpusSpec::default() };
    let ds = synth_corpus(&spec, 0)?;
    let (train, test) = ds.samples.split_at(48);
    let motion: Vec<&PoseSequence> = train.iter().map(|s| &s.motion).collect();
    let (codec, _, _) = train_codec(&motion, spec.skeleton.clone(), &CodecConfig { epochs: 10, ..CodecConfig::default() })?;
    let (apn, loss, _) = train_apn(&labeled(train), &codec, &ds.schema, &ApnConfig::default())?;
    println!("loss {:.3} -> {:.3}", loss[0], loss[loss.len() - 1]);
    let slot = ds.schema.slot_index(HANDEDNESS_SLOT).expect("slot exists");
    let acc = apn_accuracy(&labeled(test), &codec, &apn, slot, 1)?;
    println!("held-out accuracy on {HANDEDNESS_SLOT}: {acc:.3}");
    let seed = test[0].motion.frames().slice(ndarray::s![30..34, .., ..]);
    let pred = infer_seed_features(seed, &codec, &apn)?;
    println!("frame 0 distribution: {:?}", pred.frames[0][slot]);
    Ok(())
}
