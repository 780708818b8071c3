use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTimeline, WordToken};
use crate::motion::synth::SynthSample;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mono 16-bit or float WAV; multi-channel files are averaged.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        let spec = reader.spec();
        let wav_err = |e: hound::Error| Error::Format { offset: 0, message: format!("{}: {e}", path.display()) };
        let raw: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(wav_err)?,
            hound::SampleFormat::Int => {
                let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 / scale))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(wav_err)?
            }
        };
        let ch = spec.channels.max(1) as usize;
        let samples = raw.chunks(ch).map(|c| c.iter().sum::<f32>() / ch as f32).collect();
        Ok(Waveform { samples, sample_rate: spec.sample_rate })
    }

    /// 16-bit mono WAV.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let wav_err = |e: hound::Error| Error::Format { offset: 0, message: format!("{}: {e}", path.display()) };
        let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)
    }
}

/// Input of one generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub duration_s: f64,
    pub words: Vec<WordToken>,
    pub speaker_id: u32,
    pub waveform: Option<Waveform>,
    pub timeline: Option<FeatureTimeline>,
}

/// On-disk form; paths are relative to the JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceFile {
    pub duration_s: f64,
    pub words: Vec<WordToken>,
    #[serde(default)]
    pub speaker_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_timeline: Option<PathBuf>,
}

impl Utterance {
    pub fn new(
        duration_s: f64,
        words: Vec<WordToken>,
        speaker_id: u32,
        waveform: Option<Waveform>,
        timeline: Option<FeatureTimeline>,
    ) -> Result<Self> {
        if !(duration_s.is_finite() && duration_s >= 0.0) {
            return Err(Error::invalid(format!("invalid duration {duration_s}")));
        }
        for w in &words {
            if !(w.start >= 0.0 && w.start <= w.end && w.end <= duration_s + 1e-9) {
                return Err(Error::invalid(format!(
                    "word {:?} [{}, {}] outside [0, {duration_s}]",
                    w.word, w.start, w.end
                )));
            }
        }
        if let Some(wave) = &waveform {
            if wave.sample_rate == 0 {
                return Err(Error::invalid("sample rate must be positive"));
            }
            let slack = timeline.as_ref().map_or(1.0 / 15.0, |t| 1.0 / t.fps());
            if (wave.duration_s() - duration_s).abs() > slack + 1e-9 {
                return Err(Error::invalid(format!(
                    "waveform lasts {:.3} s, words span {duration_s:.3} s",
                    wave.duration_s()
                )));
            }
        }
        Ok(Utterance { duration_s, words, speaker_id, waveform, timeline })
    }

    pub fn from_sample(sample: &SynthSample, with_timeline: bool) -> Result<Self> {
        Utterance::new(
            sample.doc.duration_s,
            sample.doc.words.clone(),
            sample.speaker as u32,
            Some(Waveform { samples: sample.audio.clone(), sample_rate: sample.sample_rate }),
            if with_timeline { Some(sample.truth.clone()) } else { None },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: UtteranceFile = serde_json::from_slice(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let waveform = file.wav.as_ref().map(|p| Waveform::read_wav(&base.join(p))).transpose()?;
        let timeline = file.feature_timeline.as_ref().map(|p| FeatureTimeline::load(&base.join(p))).transpose()?;
        Utterance::new(file.duration_s, file.words, file.speaker_id, waveform, timeline)
    }
}
