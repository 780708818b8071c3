//! Per-frame modality features. The stubs stand in for pretrained text and audio models.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use super::Utterance;
use crate::error::{Error, Result};
use crate::features::{frames_in, WordToken};

pub const TEXT_DIM: usize = 16;
pub const AUDIO_BANDS: usize = 4;
/// An onset needs the frame energy to exceed this multiple of the previous frame's.
pub const ONSET_RATIO: f64 = 4.0;
const ONSET_FLOOR: f64 = 1e-10;

pub trait ModalityEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn output_dim(&self) -> usize;
    fn deterministic(&self) -> bool;
    /// `(frame_count, output_dim)` features.
    fn encode(&self, utterance: &Utterance, frame_count: usize, fps: f64) -> Result<Array2<f32>>;
}

/// Vector of a word: SHA-256 of its lowercase form mapped to `[-1, 1]`.
fn word_vector(word: &str) -> [f32; TEXT_DIM] {
    let digest = Sha256::digest(word.to_lowercase().as_bytes());
    std::array::from_fn(|i| digest[i] as f32 / 127.5 - 1.0)
}

/// Each word's vector on the frames its timing covers; zeros elsewhere.
pub fn stub_text_encoder(words: &[WordToken], frame_count: usize, fps: f64) -> Array2<f32> {
    let mut out = Array2::zeros((frame_count, TEXT_DIM));
    for w in words {
        let v = word_vector(&w.word);
        for f in frames_in(w.start, w.end, fps, frame_count) {
            out.row_mut(f).iter_mut().zip(v).for_each(|(o, x)| *o = x);
        }
    }
    out
}

/// Per frame: `ln(1 + E_b)` for `AUDIO_BANDS` equal-width frequency bands, then an onset flag.
pub fn stub_audio_encoder(samples: &[f32], sample_rate: u32, frame_count: usize, fps: f64) -> Result<Array2<f32>> {
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let sr = sample_rate as f64;
    let mut out = Array2::zeros((frame_count, AUDIO_BANDS + 1));
    let mut planner = FftPlanner::<f64>::new();
    let mut prev_energy = 0.0;
    for f in 0..frame_count {
        let lo = ((f as f64 / fps) * sr).round() as usize;
        let hi = ((((f + 1) as f64) / fps) * sr).round() as usize;
        let frame = &samples[lo.min(samples.len())..hi.min(samples.len())];
        let energy: f64 = frame.iter().map(|&x| (x as f64) * (x as f64)).sum();
        if !frame.is_empty() && energy > 0.0 {
            let n = frame.len().next_power_of_two();
            let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
            buf.resize(n, Complex::new(0.0, 0.0));
            planner.plan_fft_forward(n).process(&mut buf);
            let half = n / 2 + 1;
            for b in 0..AUDIO_BANDS {
                let (k0, k1) = (b * half / AUDIO_BANDS, (b + 1) * half / AUDIO_BANDS);
                let e: f64 = buf[k0..k1].iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
                out[[f, b]] = e.ln_1p() as f32;
            }
        }
        if energy > ONSET_FLOOR && energy > ONSET_RATIO * prev_energy {
            out[[f, AUDIO_BANDS]] = 1.0;
        }
        prev_energy = energy;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubText;

impl ModalityEncoder for StubText {
    fn name(&self) -> &str {
        "stub-text"
    }
    fn output_dim(&self) -> usize {
        TEXT_DIM
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn encode(&self, utterance: &Utterance, frame_count: usize, fps: f64) -> Result<Array2<f32>> {
        Ok(stub_text_encoder(&utterance.words, frame_count, fps))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubAudio;

impl ModalityEncoder for StubAudio {
    fn name(&self) -> &str {
        "stub-audio"
    }
    fn output_dim(&self) -> usize {
        AUDIO_BANDS + 1
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn encode(&self, utterance: &Utterance, frame_count: usize, fps: f64) -> Result<Array2<f32>> {
        match &utterance.waveform {
            Some(w) => stub_audio_encoder(&w.samples, w.sample_rate, frame_count, fps),
            None => Ok(Array2::zeros((frame_count, AUDIO_BANDS + 1))),
        }
    }
}

/// Named encoders. The generator asks for a text and an audio encoder by name.
#[derive(Clone)]
pub struct EncoderRegistry {
    encoders: BTreeMap<String, Arc<dyn ModalityEncoder>>,
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        let mut r = EncoderRegistry { encoders: BTreeMap::new() };
        r.register(Arc::new(StubText));
        r.register(Arc::new(StubAudio));
        r
    }
}

impl std::fmt::Debug for EncoderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl EncoderRegistry {
    pub fn register(&mut self, encoder: Arc<dyn ModalityEncoder>) {
        self.encoders.insert(encoder.name().to_string(), encoder);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ModalityEncoder>> {
        self.encoders
            .get(name)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no modality encoder named {name:?}")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.encoders.keys().map(String::as_str).collect()
    }
}
