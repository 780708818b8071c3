//! On-disk corpus written by `synth-data` and read by the training commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTimeline;
use crate::generator::{Utterance, UtteranceFile, Waveform};
use crate::motion::synth::SynthDataset;
use crate::motion::{read_pose_sequence, write_pose_sequence, PoseSequence};
use crate::pipeline::Split;
use crate::training::TrainSample;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    /// "train", "val" or "test".
    pub split: String,
    /// "annotated" or "unannotated".
    pub dataset: String,
    pub speaker: u32,
    pub motion: PathBuf,
    pub utterance: PathBuf,
    pub annotation: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub schema_version: u32,
    pub fps: f64,
    pub samples: Vec<CorpusEntry>,
}

#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub entry: CorpusEntry,
    pub motion: PoseSequence,
    pub utterance: Utterance,
}

impl LoadedSample {
    pub fn to_train(&self) -> TrainSample {
        TrainSample {
            id: self.entry.id.clone(),
            dataset: self.entry.dataset.clone(),
            utterance: self.utterance.clone(),
            motion: self.motion.clone(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Motion, audio, utterance, annotation and (annotated clips only) feature files plus `corpus.json`.
pub fn write_corpus(dataset: &SynthDataset, split: &Split, dir: &Path) -> Result<CorpusIndex> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        let part = if split.val.contains(&i) {
            "val"
        } else if split.test.contains(&i) {
            "test"
        } else {
            "train"
        };
        let name = |ext: &str| PathBuf::from(format!("{}.{ext}", s.id));
        write_pose_sequence(&s.motion, &dir.join(name("gpsq")))?;
        Waveform { samples: s.audio.clone(), sample_rate: s.sample_rate }.write_wav(&dir.join(name("wav")))?;
        write_json(&dir.join(name("annotation.json")), &s.doc)?;
        let features = match &s.timeline {
            Some(tl) => {
                tl.save(&dir.join(name("features.json")))?;
                Some(name("features.json"))
            }
            None => None,
        };
        let utt = UtteranceFile {
            duration_s: s.doc.duration_s,
            words: s.doc.words.clone(),
            speaker_id: s.speaker as u32,
            wav: Some(name("wav")),
            feature_timeline: features,
        };
        write_json(&dir.join(name("utt.json")), &utt)?;
        entries.push(CorpusEntry {
            id: s.id.clone(),
            split: part.into(),
            dataset: if s.annotated() { "annotated" } else { "unannotated" }.into(),
            speaker: s.speaker as u32,
            motion: name("gpsq"),
            utterance: name("utt.json"),
            annotation: name("annotation.json"),
        });
    }
    let index = CorpusIndex {
        schema_version: CORPUS_SCHEMA_VERSION,
        fps: dataset.samples.first().map_or(15.0, |s| s.motion.fps()),
        samples: entries,
    };
    write_json(&dir.join("corpus.json"), &index)?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<CorpusIndex> {
    let p = dir.join("corpus.json");
    let text = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let index: CorpusIndex = serde_json::from_slice(&text)?;
    if index.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(Error::Schema(format!("{}: unsupported corpus schema_version {}", p.display(), index.schema_version)));
    }
    Ok(index)
}

/// Samples of one split (`None` for all).
pub fn load_split(dir: &Path, split: Option<&str>) -> Result<Vec<LoadedSample>> {
    let index = read_index(dir)?;
    index
        .samples
        .into_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|entry| {
            let motion = read_pose_sequence(&dir.join(&entry.motion))?;
            let utterance = Utterance::load(&dir.join(&entry.utterance))?;
            Ok(LoadedSample { entry, motion, utterance })
        })
        .collect()
}

pub fn labeled<'a>(samples: &'a [LoadedSample]) -> Vec<(&'a PoseSequence, &'a FeatureTimeline)> {
    samples.iter().filter_map(|s| s.utterance.timeline.as_ref().map(|t| (&s.motion, t))).collect()
}
