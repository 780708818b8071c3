use crate::error::{Error, Result};

/// Rise time before an entity or position label.
pub const OCCURRENCE_RISE_S: f64 = 2.0;
/// Fall time after the label ends.
pub const OCCURRENCE_FALL_S: f64 = 2.0;

/// Occurrence value of a single event at time `t`: 0 until `start - 2`, linear up to 1 at
/// `start`, 1 until `end`, linear down to 0 at `end + 2`.
pub fn occurrence_ramp(start: f64, end: f64, t: f64) -> f64 {
    if t < start - OCCURRENCE_RISE_S || t > end + OCCURRENCE_FALL_S {
        0.0
    } else if t < start {
        (t - (start - OCCURRENCE_RISE_S)) / OCCURRENCE_RISE_S
    } else if t <= end {
        1.0
    } else {
        1.0 - (t - end) / OCCURRENCE_FALL_S
    }
}

/// Per-frame occurrence signal over `[0, duration)`; overlapping events combine by maximum.
pub fn occurrence_timeline(events: &[(f64, f64)], duration_s: f64, fps: f64) -> Result<Vec<f32>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    for &(s, e) in events {
        if !(0.0 <= s && s <= e && e <= duration_s) {
            return Err(Error::invalid(format!("event [{s}, {e}] outside [0, {duration_s}]")));
        }
    }
    let n = (duration_s * fps).round() as usize;
    Ok((0..n)
        .map(|f| {
            let t = f as f64 / fps;
            events
                .iter()
                .map(|&(s, e)| occurrence_ramp(s, e, t))
                .fold(0.0f64, f64::max) as f32
        })
        .collect())
}
