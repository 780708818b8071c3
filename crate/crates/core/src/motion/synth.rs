//! Procedural labeled corpus in which the labels drive the motion.
//!
//! Each sequence is a stretch of synthetic speech (timed words plus a tone-burst waveform) with
//! gesture phrases attached to speech phrases. A phrase activates one or both arms. The active
//! wrist travels to an offset picked by its "Wrist Position" label, oscillates with a pattern
//! picked by "Gesture Phrase" while the "Gesture Phase" is stroke, with amplitude scaled by
//! "Movement Extent", and rises with the entity occurrence signal. Idle arms stay at rest up to a
//! small smooth sway.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Handedness, PoseSequence, Skeleton};
use crate::error::{Error, Result};
use crate::features::{
    feature_timeline, AnnotationDoc, FeatureSchema, FeatureTimeline, GroupLexicon, Interval, WordToken,
    SPOKEN_ENTITY, SPOKEN_RELATIVE_POSITION,
};
use crate::nn::seeded;

/// Oscillation amplitude multipliers for small, medium and large extents.
pub const EXTENT_FACTORS: [f64; 3] = [0.5, 1.0, 1.6];
/// Base oscillation amplitude in meters before extent and speaker scaling.
pub const BASE_AMPLITUDE: f64 = 0.06;
/// Extra wrist height at full entity occurrence.
pub const OCCURRENCE_LIFT: f64 = 0.08;

/// Right-hand wrist offsets from rest per "Wrist Position" value (x is mirrored for the left hand).
const WRIST_OFFSETS: [[f64; 3]; 6] = [
    [-0.18, 0.30, 0.25],
    [0.00, 0.50, 0.15],
    [0.00, 0.10, 0.20],
    [0.25, 0.25, 0.10],
    [-0.05, 0.25, 0.40],
    [-0.15, 0.40, 0.05],
];

/// Finger spread relative to rest per "Hand Shape" value.
const SHAPE_SPREAD: [f64; 6] = [1.0, 0.4, 0.7, 0.8, 1.4, 0.5];

const FILLERS: [(&str, &str); 12] = [
    ("then", "SCONJ"),
    ("you", "PRON"),
    ("go", "VERB"),
    ("the", "DET"),
    ("walk", "VERB"),
    ("and", "CCONJ"),
    ("there", "PRON"),
    ("is", "AUX"),
    ("a", "DET"),
    ("see", "VERB"),
    ("to", "ADP"),
    ("it", "PRON"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandChoice {
    Left,
    Right,
    Both,
}

/// Sampling distribution for gesture labels. Each categorical draw consumes exactly one uniform,
/// so changing a distribution never shifts the random stream of anything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelDistribution {
    /// Chance that a speech phrase carries a gesture.
    pub gesture_prob: f64,
    /// Weights of left, right, both.
    pub hands: [f64; 3],
    /// Weights of small, medium, large.
    pub extent: [f64; 3],
    /// Chance that a gesture phrase has an entity event; a positional event has the same chance.
    pub semantic_prob: f64,
    /// Chance that a semantic event lands on a word the lexicon cannot resolve.
    pub unmatched_prob: f64,
}

impl Default for LabelDistribution {
    fn default() -> Self {
        LabelDistribution {
            gesture_prob: 0.85,
            hands: [0.35, 0.45, 0.2],
            extent: [1.0, 1.0, 1.0],
            semantic_prob: 0.5,
            unmatched_prob: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    #[serde(skip, default = "default_skeleton")]
    pub skeleton: Arc<Skeleton>,
    pub sequence_count: usize,
    /// Shortest and longest sequence in seconds.
    pub duration_range: (f64, f64),
    pub fps: f64,
    /// Share of sequences that keep their feature timeline (the rest are unannotated).
    pub annotated_fraction: f64,
    pub labels: LabelDistribution,
    /// Per-speaker amplitude scale; the speaker id indexes this list.
    pub speaker_scales: Vec<f64>,
    pub sample_rate: u32,
    /// Amplitude of the idle sway in meters.
    pub sway: f64,
}

fn default_skeleton() -> Arc<Skeleton> {
    Arc::new(Skeleton::upper_body())
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            skeleton: default_skeleton(),
            sequence_count: 200,
            duration_range: (8.0, 14.0),
            fps: 15.0,
            annotated_fraction: 0.5,
            labels: LabelDistribution::default(),
            speaker_scales: vec![0.85, 1.0, 1.15],
            sample_rate: 4000,
            sway: 0.002,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.duration_range;
        if self.sequence_count == 0 {
            return Err(Error::invalid("corpus spec asks for zero sequences"));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!("bad duration range ({lo}, {hi})")));
        }
        if lo * self.fps < 1.0 {
            return Err(Error::invalid("sequences shorter than one frame"));
        }
        if !(self.fps > 0.0) || self.sample_rate == 0 {
            return Err(Error::invalid("fps and sample rate must be positive"));
        }
        if self.speaker_scales.is_empty() {
            return Err(Error::invalid("corpus spec has no speakers"));
        }
        if !(0.0..=1.0).contains(&self.annotated_fraction) {
            return Err(Error::invalid("annotated_fraction outside [0, 1]"));
        }
        let l = &self.labels;
        for w in l.hands.iter().chain(&l.extent) {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid("label weights must be nonnegative"));
            }
        }
        if l.hands.iter().sum::<f64>() <= 0.0 || l.extent.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("label weights sum to zero"));
        }
        for p in [l.gesture_prob, l.semantic_prob, l.unmatched_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("label probabilities must lie in [0, 1]"));
            }
        }
        for side in [Handedness::Left, Handedness::Right] {
            if self.skeleton.wrist(side).is_none() {
                return Err(Error::invalid(format!("skeleton has no {side:?} wrist")));
            }
        }
        Ok(())
    }
}

/// One synthetic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub speaker: usize,
    /// Words and the full set of annotation tiers used to build the motion.
    pub doc: AnnotationDoc,
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub motion: PoseSequence,
    /// Feature labels; `None` for the unannotated part of the corpus.
    pub timeline: Option<FeatureTimeline>,
    /// Labels as constructed, kept even for unannotated samples (ground truth for tests).
    pub truth: FeatureTimeline,
}

impl SynthSample {
    pub fn annotated(&self) -> bool {
        self.timeline.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub schema: FeatureSchema,
    pub samples: Vec<SynthSample>,
}

impl SynthDataset {
    pub fn annotated(&self) -> impl Iterator<Item = &SynthSample> {
        self.samples.iter().filter(|s| s.annotated())
    }

    pub fn unannotated(&self) -> impl Iterator<Item = &SynthSample> {
        self.samples.iter().filter(|s| !s.annotated())
    }
}

/// Index of a weighted choice from a single uniform draw.
fn pick(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn uniform_index(n: usize, rng: &mut impl Rng) -> usize {
    ((rng.gen::<f64>() * n as f64) as usize).min(n - 1)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Tone frequency for a word, stable across runs.
fn word_tone(word: &str) -> f64 {
    let h = Sha256::digest(word.as_bytes());
    200.0 + 600.0 * (u16::from_le_bytes([h[0], h[1]]) as f64 / 65535.0)
}

#[derive(Debug, Clone)]
struct HandPhrase {
    start: f64,
    prep_end: f64,
    stroke_end: f64,
    hold_end: f64,
    end: f64,
    phrase: usize,
    shape: usize,
    wrist: usize,
    extent: usize,
    freq: f64,
    phase: f64,
}

impl HandPhrase {
    /// How far the arm is out of rest.
    fn activation(&self, t: f64) -> f64 {
        if t < self.start || t >= self.end {
            0.0
        } else if t < self.prep_end {
            smoothstep((t - self.start) / (self.prep_end - self.start))
        } else if t < self.hold_end {
            1.0
        } else {
            1.0 - smoothstep((t - self.hold_end) / (self.end - self.hold_end))
        }
    }

    /// Oscillation envelope: on during the stroke with short ramps at both ends.
    fn gate(&self, t: f64) -> f64 {
        const RAMP: f64 = 0.15;
        if t < self.prep_end || t >= self.stroke_end {
            return 0.0;
        }
        smoothstep((t - self.prep_end) / RAMP) * smoothstep((self.stroke_end - t) / RAMP)
    }

    fn oscillation(&self, t: f64) -> [f64; 3] {
        let w = TAU * self.freq * (t - self.prep_end) + self.phase;
        match self.phrase {
            0 => [w.sin(), w.cos() - self.phase.cos(), 0.0],
            1 => [0.0, 0.0, w.sin()],
            2 => [0.0, w.sin(), 0.0],
            _ => [w.sin(), 0.0, 0.0],
        }
    }
}

/// A speech phrase: words and its time span.
struct SpeechPhrase {
    start: f64,
    end: f64,
    words: Vec<WordToken>,
}

fn speech(duration: f64, lexicon: &GroupLexicon, rng: &mut impl Rng) -> Vec<SpeechPhrase> {
    let nouns: Vec<&String> = lexicon.nouns.keys().collect();
    let positional: Vec<&String> = lexicon.positional.keys().collect();
    // words of one phrase talk about one entity group and one direction
    let topic = |table: &BTreeMap<String, String>, key: &String| -> Vec<String> {
        table.iter().filter(|(_, g)| **g == table[key]).map(|(w, _)| w.clone()).collect()
    };
    let mut phrases = Vec::new();
    let mut t = 0.3 + 0.5 * rng.gen::<f64>();
    loop {
        let len = 1.6 + 2.4 * rng.gen::<f64>();
        if t + len > duration - 0.3 {
            break;
        }
        let topic_nouns = topic(&lexicon.nouns, nouns[uniform_index(nouns.len(), rng)]);
        let topic_positional = topic(&lexicon.positional, positional[uniform_index(positional.len(), rng)]);
        let end = t + len;
        let mut words = Vec::new();
        let mut w = t;
        loop {
            let wl = 0.18 + 0.3 * rng.gen::<f64>();
            if w + wl > end {
                break;
            }
            let kind: f64 = rng.gen();
            let (word, pos) = if kind < 0.15 {
                (topic_nouns[uniform_index(topic_nouns.len(), rng)].as_str(), "NOUN")
            } else if kind < 0.25 {
                (topic_positional[uniform_index(topic_positional.len(), rng)].as_str(), "ADJ")
            } else {
                let f = FILLERS[uniform_index(FILLERS.len(), rng)];
                (f.0, f.1)
            };
            words.push(WordToken::new(word, pos, w, w + wl));
            w += wl + 0.05;
        }
        if !words.is_empty() {
            let end = words.last().unwrap().end;
            phrases.push(SpeechPhrase { start: t, end, words });
        }
        t = end + 0.5 + 0.8 * rng.gen::<f64>();
    }
    phrases
}

/// Tone bursts per word with sharp onsets; exact zeros between words.
fn waveform(words: &[WordToken], duration: f64, sample_rate: u32) -> Vec<f32> {
    let sr = sample_rate as f64;
    let mut audio = vec![0f32; (duration * sr).round() as usize];
    for w in words {
        let f = word_tone(&w.word);
        let s0 = (w.start * sr).ceil() as usize;
        let s1 = ((w.end * sr).ceil() as usize).min(audio.len());
        for (k, sample) in audio[s0.min(s1)..s1].iter_mut().enumerate() {
            let t = k as f64 / sr;
            let decay = (-(t / (w.end - w.start)) * 1.5).exp();
            *sample = (0.4 * decay * (TAU * f * t).sin()) as f32;
        }
    }
    audio
}

fn add_interval(tiers: &mut BTreeMap<String, Vec<Interval>>, tier: &str, start: f64, end: f64, value: &str) {
    if end > start {
        tiers.entry(tier.to_string()).or_default().push(Interval {
            start,
            end,
            value: value.to_string(),
        });
    }
}

/// Builds the full labeled corpus. Identical `(spec, seed)` give bit-identical output.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let schema = FeatureSchema::default();
    let lexicon = GroupLexicon::default();
    let mut rng = seeded(seed);
    let annotated_target = (spec.annotated_fraction * spec.sequence_count as f64).round() as usize;
    let mut samples = Vec::with_capacity(spec.sequence_count);
    for i in 0..spec.sequence_count {
        let sub_seed: u64 = rng.gen();
        let annotated = i * annotated_target / spec.sequence_count
            != (i + 1) * annotated_target / spec.sequence_count;
        samples.push(synth_sequence(spec, &schema, &lexicon, &format!("seq{i:04}"), annotated, sub_seed)?);
    }
    Ok(SynthDataset { schema, samples })
}

/// One sequence from its own seed.
pub fn synth_sequence(
    spec: &CorpusSpec,
    schema: &FeatureSchema,
    lexicon: &GroupLexicon,
    id: &str,
    annotated: bool,
    seed: u64,
) -> Result<SynthSample> {
    let mut rng = seeded(seed);
    let (lo, hi) = spec.duration_range;
    let duration = ((lo + (hi - lo) * rng.gen::<f64>()) * spec.fps).round() / spec.fps;
    let speaker = uniform_index(spec.speaker_scales.len(), &mut rng);
    let phrases = speech(duration, lexicon, &mut rng);

    let vocab = |group: &str| -> &[String] {
        &schema.slots()[schema.find(group, crate::features::SlotHand::Left).expect("schema validated")].vocabulary
    };
    let mut tiers: BTreeMap<String, Vec<Interval>> = BTreeMap::new();
    let mut hands: [Vec<HandPhrase>; 2] = [Vec::new(), Vec::new()];
    let l = &spec.labels;
    for sp in &phrases {
        // fixed number of draws per phrase whatever the outcome
        let u_gesture: f64 = rng.gen();
        let hand = pick(&l.hands, &mut rng);
        let extent = pick(&l.extent, &mut rng);
        let phrase = uniform_index(4, &mut rng);
        let shape = uniform_index(6, &mut rng);
        let wrist = uniform_index(6, &mut rng);
        let practice = uniform_index(8, &mut rng);
        let freq = 1.0 + rng.gen::<f64>();
        let phase = TAU * rng.gen::<f64>();
        let prep = 0.3 + 0.2 * rng.gen::<f64>();
        let retr = 0.3 + 0.2 * rng.gen::<f64>();
        let hold = 0.5 * rng.gen::<f64>();
        let u_entity: f64 = rng.gen();
        let u_position: f64 = rng.gen();
        let u_unmatched: f64 = rng.gen();
        let u_word: f64 = rng.gen();
        let start = (sp.start - 0.1).max(0.0);
        let end = (sp.end + 0.1).min(duration);
        let room = end - start - prep - retr;
        if u_gesture >= l.gesture_prob || room < 0.5 {
            continue;
        }
        let hold = hold.min(room - 0.5);
        let hp = HandPhrase {
            start,
            prep_end: start + prep,
            stroke_end: end - retr - hold,
            hold_end: end - retr,
            end,
            phrase,
            shape,
            wrist,
            extent,
            freq,
            phase,
        };
        let choice = [HandChoice::Left, HandChoice::Right, HandChoice::Both][hand];
        for (h, side) in [(0usize, "Left"), (1, "Right")] {
            let active = matches!((choice, h), (HandChoice::Both, _) | (HandChoice::Left, 0) | (HandChoice::Right, 1));
            if !active {
                continue;
            }
            let tier = |g: &str| format!("{side} {g}");
            add_interval(&mut tiers, &tier("Gesture Phase"), hp.start, hp.prep_end, "preparation");
            add_interval(&mut tiers, &tier("Gesture Phase"), hp.prep_end, hp.stroke_end, "stroke");
            add_interval(&mut tiers, &tier("Gesture Phase"), hp.stroke_end, hp.hold_end, "hold");
            add_interval(&mut tiers, &tier("Gesture Phase"), hp.hold_end, hp.end, "retraction");
            if sp.words.iter().any(|w| w.is_adjective_or_adverb()) {
                // resolved from the words like the spoken tiers
                add_interval(&mut tiers, &tier("Gesture Relative Position"), hp.start, hp.end, "position");
            }
            for (group, value) in [
                ("Gesture Phrase", phrase),
                ("Hand Shape", shape),
                ("Movement Extent", extent),
                ("Gesture Practice", practice),
            ] {
                add_interval(&mut tiers, &tier(group), hp.start, hp.end, &vocab(group)[value]);
            }
            add_interval(&mut tiers, &tier("Wrist Position"), hp.prep_end, hp.hold_end, &vocab("Wrist Position")[wrist]);
            hands[h].push(hp.clone());
        }
        // semantic events sit on a word of the phrase
        for (u, tier, want_noun) in [(u_entity, SPOKEN_ENTITY, true), (u_position, SPOKEN_RELATIVE_POSITION, false)] {
            if u >= l.semantic_prob {
                continue;
            }
            let candidates: Vec<&WordToken> = if u_unmatched < l.unmatched_prob {
                sp.words.iter().filter(|w| !w.is_noun() && !w.is_adjective_or_adverb()).collect()
            } else if want_noun {
                sp.words.iter().filter(|w| w.is_noun()).collect()
            } else {
                sp.words.iter().filter(|w| w.is_adjective_or_adverb()).collect()
            };
            if candidates.is_empty() {
                continue;
            }
            let w = candidates[((u_word * candidates.len() as f64) as usize).min(candidates.len() - 1)];
            add_interval(&mut tiers, tier, w.start, w.end, "event");
        }
    }
    let words: Vec<WordToken> = phrases.into_iter().flat_map(|p| p.words).collect();
    let doc = AnnotationDoc::new(duration, tiers, words)?;
    let truth = feature_timeline(&doc, schema, lexicon, spec.fps)?.timeline;
    let audio = waveform(&doc.words, duration, spec.sample_rate);

    let scale = spec.speaker_scales[speaker];
    let motion = render_motion(spec, &hands, &truth, scale, &mut rng)?;
    Ok(SynthSample {
        id: id.to_string(),
        speaker,
        doc,
        audio,
        sample_rate: spec.sample_rate,
        motion,
        timeline: annotated.then(|| truth.clone()),
        truth,
    })
}

/// Smooth low-frequency sway: two sinusoids per axis with random frequency and phase.
struct Sway {
    terms: Vec<[(f64, f64); 2]>,
    amplitude: f64,
}

impl Sway {
    fn new(channels: usize, amplitude: f64, rng: &mut impl Rng) -> Self {
        let terms = (0..channels)
            .map(|_| {
                let mut term = || (0.2 + 0.3 * rng.gen::<f64>(), TAU * rng.gen::<f64>());
                [term(), term()]
            })
            .collect();
        Sway { terms, amplitude }
    }

    fn at(&self, channel: usize, t: f64) -> f64 {
        let [(f1, p1), (f2, p2)] = self.terms[channel];
        0.5 * self.amplitude * ((TAU * f1 * t + p1).sin() + (TAU * f2 * t + p2).sin())
    }
}

fn render_motion(
    spec: &CorpusSpec,
    hands: &[Vec<HandPhrase>; 2],
    truth: &FeatureTimeline,
    speaker_scale: f64,
    rng: &mut impl Rng,
) -> Result<PoseSequence> {
    let sk = &spec.skeleton;
    let n = truth.len();
    let rest = sk.rest_pose();
    let center_sway = Sway::new(3, spec.sway, rng);
    let side_sway = [Sway::new(3, spec.sway, rng), Sway::new(3, spec.sway, rng)];
    let wrists = [
        sk.wrist(Handedness::Left).expect("validated"),
        sk.wrist(Handedness::Right).expect("validated"),
    ];
    let mut frames = Array3::<f32>::zeros((n, sk.joint_count(), 3));
    for f in 0..n {
        let t = f as f64 / spec.fps;
        let occ = truth.frames()[f].occurrence as f64;
        let mut wrist_disp = [[0.0f64; 3]; 2];
        let mut spread = [1.0f64; 2];
        let mut idle = [1.0f64; 2];
        for h in 0..2 {
            let mirror = if h == 0 { -1.0 } else { 1.0 };
            if let Some(p) = hands[h].iter().find(|p| t >= p.start && t < p.end) {
                let a = p.activation(t);
                let g = p.gate(t);
                let amp = BASE_AMPLITUDE * EXTENT_FACTORS[p.extent] * speaker_scale;
                let osc = p.oscillation(t);
                let off = WRIST_OFFSETS[p.wrist];
                for k in 0..3 {
                    let mut d = a * off[k] + g * amp * osc[k];
                    if k == 1 {
                        d += a * OCCURRENCE_LIFT * occ;
                    }
                    if k == 0 {
                        d *= mirror;
                    }
                    wrist_disp[h][k] = d;
                }
                spread[h] = 1.0 + a * (SHAPE_SPREAD[p.shape] - 1.0);
                idle[h] = 1.0 - a;
            }
        }
        for j in 0..sk.joint_count() {
            let r = rest[j];
            let mut pos = [r[0] as f64, r[1] as f64, r[2] as f64];
            match sk.handedness(j) {
                Handedness::Center => {
                    // root stays at the origin
                    if sk.parent(j).is_some() {
                        for k in 0..3 {
                            pos[k] += center_sway.at(k, t);
                        }
                    }
                }
                side => {
                    let h = if side == Handedness::Left { 0 } else { 1 };
                    let depth = sk.side_depth(j).unwrap_or(0);
                    let w = wrists[h];
                    let rw = rest[w];
                    if depth >= 3 {
                        for k in 0..3 {
                            pos[k] = rw[k] as f64 + wrist_disp[h][k] + (r[k] - rw[k]) as f64 * spread[h];
                        }
                    } else {
                        let weight = depth as f64 / 2.0;
                        for k in 0..3 {
                            pos[k] += weight * wrist_disp[h][k];
                        }
                    }
                    for k in 0..3 {
                        pos[k] += idle[h] * side_sway[h].at(k, t);
                    }
                }
            }
            for k in 0..3 {
                frames[[f, j, k]] = pos[k] as f32;
            }
        }
    }
    PoseSequence::new(sk.clone(), spec.fps, frames)
}
