//! Pose data model: skeletons, pose sequences, chunk arithmetic, GPSQ files, resampling and the
//! procedural corpus.

mod chunk;
mod gpsq;
mod resample;
mod skeleton;
pub mod synth;

use std::sync::Arc;

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chunk::{chunk_plan, Chunk, ChunkPlan};
pub use gpsq::{decode_gpsq, encode_gpsq, read_pose_sequence, sidecar_path, write_pose_sequence, GPSQ_MAGIC};
pub use resample::resample;
pub use skeleton::{Handedness, Skeleton};

/// Frames x joints x 3 coordinates sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    skeleton: Arc<Skeleton>,
    fps: f64,
    frames: Array3<f32>,
}

impl PoseSequence {
    pub fn new(skeleton: Arc<Skeleton>, fps: f64, frames: Array3<f32>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let (n, j, c) = frames.dim();
        if n == 0 {
            return Err(Error::invalid("pose sequence needs at least one frame"));
        }
        if j != skeleton.joint_count() || c != 3 {
            return Err(Error::invalid(format!(
                "frame array is {n}x{j}x{c}, skeleton has {} joints",
                skeleton.joint_count()
            )));
        }
        if let Some((idx, _)) = frames.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate at frame {}, joint {}, axis {}",
                idx.0, idx.1, idx.2
            )));
        }
        Ok(PoseSequence {
            skeleton,
            fps,
            frames,
        })
    }

    /// `frame_count` copies of the skeleton's rest pose.
    pub fn rest(skeleton: Arc<Skeleton>, fps: f64, frame_count: usize) -> Result<Self> {
        let frames = rest_frames(&skeleton, frame_count);
        PoseSequence::new(skeleton, fps, frames)
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &Array3<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<f32> {
        self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.dim().0
    }

    pub fn joint_count(&self) -> usize {
        self.frames.dim().1
    }

    pub fn frame(&self, index: usize) -> ArrayView2<'_, f32> {
        self.frames.index_axis(Axis(0), index)
    }

    pub fn duration_s(&self) -> f64 {
        self.frame_count() as f64 / self.fps
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frame_count() {
            return Err(Error::invalid(format!(
                "slice [{start}, {end}) outside 0..{}",
                self.frame_count()
            )));
        }
        let frames = self.frames.slice(ndarray::s![start..end, .., ..]).to_owned();
        PoseSequence::new(self.skeleton.clone(), self.fps, frames)
    }

    /// Summed frame-to-frame Euclidean displacement of one joint.
    pub fn path_length(&self, joint: usize) -> f64 {
        let f = &self.frames;
        (1..self.frame_count())
            .map(|t| {
                (0..3)
                    .map(|a| {
                        let d = (f[[t, joint, a]] - f[[t - 1, joint, a]]) as f64;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

pub(crate) fn rest_frames(skeleton: &Skeleton, frame_count: usize) -> Array3<f32> {
    let rest = skeleton.rest_pose();
    Array3::from_shape_fn((frame_count, skeleton.joint_count(), 3), |(_, j, a)| rest[j][a])
}

/// Seed length M, generated length N and sampling rate S of chunked synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub seed_frames: usize,
    pub chunk_frames: usize,
    pub fps: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed_frames: 4,
            chunk_frames: 30,
            fps: 15.0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed_frames == 0 || self.chunk_frames == 0 {
            return Err(Error::invalid("seed_frames and chunk_frames must be at least 1"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    /// Frames emitted for an utterance of `duration_s` seconds.
    pub fn frame_count(&self, duration_s: f64) -> usize {
        (duration_s * self.fps).round().max(0.0) as usize
    }

    /// Length of one chunk in seconds, seed included.
    pub fn chunk_seconds(&self) -> f64 {
        (self.seed_frames + self.chunk_frames) as f64 / self.fps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_with_index() {
        let sk = Arc::new(Skeleton::upper_body());
        let mut frames = rest_frames(&sk, 3);
        frames[[2, 5, 1]] = f32::NAN;
        let err = PoseSequence::new(sk, 15.0, frames).unwrap_err().to_string();
        assert!(err.contains("frame 2, joint 5, axis 1"), "{err}");
    }

    #[test]
    fn default_chunk_is_two_seconds_plus_seed() {
        let cfg = GenerationConfig::default();
        assert_eq!(cfg.frame_count(6.0), 90);
        assert!((cfg.chunk_seconds() - 34.0 / 15.0).abs() < 1e-12);
    }
}
