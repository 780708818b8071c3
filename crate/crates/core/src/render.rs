//! Front-view stick figure frames as PNG.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::PoseSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    /// Share of the image height taken by the rest pose.
    pub fill: f64,
    pub joint_radius: i32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { width: 256, height: 256, fill: 0.6, joint_radius: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMetadata {
    pub frames: usize,
    pub fps: f64,
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
    pub files: Vec<String>,
}

/// Pixel positions of every joint and the bone segments of one frame. The framing is fixed by
/// the rest pose, so motion never rescales the view.
pub fn frame_geometry(seq: &PoseSequence, frame: usize, cfg: &RenderConfig) -> Result<(Vec<(f32, f32)>, Vec<(usize, usize)>)> {
    if frame >= seq.frame_count() {
        return Err(Error::invalid(format!("frame {frame} out of range for {} frames", seq.frame_count())));
    }
    let rest = seq.skeleton().rest_pose();
    let (mut lo, mut hi) = ([f32::MAX; 2], [f32::MIN; 2]);
    for p in rest {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[1] - lo[1]).max(hi[0] - lo[0]).max(1e-3) as f64;
    let scale = cfg.fill * cfg.height as f64 / span;
    let (cx, cy) = ((lo[0] + hi[0]) as f64 / 2.0, (lo[1] + hi[1]) as f64 / 2.0);
    let f = seq.frame(frame);
    let points = (0..seq.joint_count())
        .map(|j| {
            let x = cfg.width as f64 / 2.0 + (f[[j, 0]] as f64 - cx) * scale;
            let y = cfg.height as f64 / 2.0 - (f[[j, 1]] as f64 - cy) * scale;
            (x as f32, y as f32)
        })
        .collect();
    Ok((points, seq.skeleton().bones().collect()))
}

pub fn render_frame(seq: &PoseSequence, frame: usize, cfg: &RenderConfig) -> Result<RgbImage> {
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let (points, bones) = frame_geometry(seq, frame, cfg)?;
    let mut img = RgbImage::from_pixel(cfg.width, cfg.height, Rgb([255, 255, 255]));
    for (a, b) in bones {
        draw_line_segment_mut(&mut img, points[a], points[b], Rgb([40, 40, 40]));
    }
    for (j, &(x, y)) in points.iter().enumerate() {
        let color = match seq.skeleton().handedness(j) {
            crate::motion::Handedness::Left => Rgb([41, 128, 185]),
            crate::motion::Handedness::Right => Rgb([192, 57, 43]),
            crate::motion::Handedness::Center => Rgb([40, 40, 40]),
        };
        draw_filled_circle_mut(&mut img, (x.round() as i32, y.round() as i32), cfg.joint_radius, color);
    }
    Ok(img)
}

/// `frame_00000.png`, ... plus `render.json` in `dir`.
pub fn render_sequence(seq: &PoseSequence, dir: &Path, cfg: &RenderConfig) -> Result<RenderMetadata> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(seq.frame_count());
    for f in 0..seq.frame_count() {
        let name = format!("frame_{f:05}.png");
        let path = dir.join(&name);
        render_frame(seq, f, cfg)?.save(&path)?;
        files.push(name);
    }
    let meta = RenderMetadata {
        frames: seq.frame_count(),
        fps: seq.fps(),
        duration_s: seq.duration_s(),
        width: cfg.width,
        height: cfg.height,
        files,
    };
    let p = dir.join("render.json");
    std::fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
    Ok(meta)
}
