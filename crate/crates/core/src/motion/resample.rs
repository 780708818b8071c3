use ndarray::Array3;

use super::PoseSequence;
use crate::error::{Error, Result};

/// Linear per-coordinate resampling. Output frame `i` sits at `i / target_fps` seconds; the frame
/// count is `round(n * target_fps / fps)` (at least one). A single-frame input is repeated.
pub fn resample(seq: &PoseSequence, target_fps: f64) -> Result<PoseSequence> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::invalid(format!("target fps must be positive, got {target_fps}")));
    }
    if target_fps == seq.fps() {
        return Ok(seq.clone());
    }
    let n = seq.frame_count();
    let out_n = ((n as f64 * target_fps / seq.fps()).round() as usize).max(1);
    let src = seq.frames();
    let joints = seq.joint_count();
    let mut out = Array3::<f32>::zeros((out_n, joints, 3));
    for i in 0..out_n {
        let pos = (i as f64 / target_fps * seq.fps()).min((n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let w = pos - lo as f64;
        for j in 0..joints {
            for a in 0..3 {
                let (x0, x1) = (src[[lo, j, a]] as f64, src[[hi, j, a]] as f64);
                out[[i, j, a]] = (x0 + (x1 - x0) * w) as f32;
            }
        }
    }
    PoseSequence::new(seq.skeleton().clone(), target_fps, out)
}
