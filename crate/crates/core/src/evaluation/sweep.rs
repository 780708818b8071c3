//! Per-slot substitution sweep: how far the generated motion moves when one categorical label is
//! replaced across a labeled test set.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::LatentMode;
use crate::error::{Error, Result};
use crate::features::{FeatureTimeline, MISSING};
use crate::generator::{generate, ModelBundle, Utterance};
use crate::motion::{GenerationConfig, PoseSequence};
use crate::nn::seeded;

/// Slot whose substitution moves the dominant hand.
pub const HANDEDNESS_SLOT: &str = "Right Wrist Position";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub interval_s: f64,
    /// Categorical slot indices to sweep; empty sweeps all of them.
    pub slots: Vec<usize>,
    pub bootstrap: usize,
    /// Random sign flips when the exact test (at most `EXACT_LIMIT` intervals) is out of reach.
    pub permutations: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { interval_s: 20.0, slots: Vec::new(), bootstrap: 1000, permutations: 10_000, seed: 0 }
    }
}

const EXACT_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub slot: usize,
    pub slot_name: String,
    /// `None` for the identity substitution.
    pub value: Option<usize>,
    pub value_name: String,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub intervals: usize,
    pub rows: Vec<SweepRow>,
}

/// Copy of `tl` with `slot` set to `value` on every frame where it is labeled.
pub fn substitute(tl: &FeatureTimeline, slot: usize, value: usize) -> FeatureTimeline {
    let mut out = tl.clone();
    for f in out.frames_mut() {
        if f.categorical[slot] != MISSING {
            f.categorical[slot] = value as i32;
        }
    }
    out
}

/// Mean absolute difference per interval of `frames_per` frames; a short tail forms its own interval.
pub fn interval_l1(a: &PoseSequence, b: &PoseSequence, frames_per: usize) -> Result<Vec<f64>> {
    if a.frames().dim() != b.frames().dim() {
        return Err(Error::invalid("sequences differ in shape"));
    }
    let per = frames_per.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < a.frame_count() {
        let end = (start + per).min(a.frame_count());
        let (x, y) = (a.slice(start, end)?, b.slice(start, end)?);
        let n = x.frames().len() as f64;
        let s: f64 = x.frames().iter().zip(y.frames().iter()).map(|(p, q)| (*p as f64 - *q as f64).abs()).sum();
        out.push(s / n);
        start = end;
    }
    Ok(out)
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 { x.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_ci(x: &[f64], resamples: usize, rng: &mut impl Rng) -> (f64, f64) {
    if x.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..x.len()).map(|_| x[rng.gen_range(0..x.len())]).sum::<f64>() / x.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (q(0.025), q(0.975))
}

/// Two-sided sign-flip test of "the paired differences are symmetric about zero". Exact for up
/// to 16 pairs, Monte Carlo with `(count + 1) / (draws + 1)` beyond.
pub fn sign_flip_p(d: &[f64], draws: usize, rng: &mut impl Rng) -> f64 {
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let obs = d.iter().sum::<f64>().abs();
    let tol = 1e-12 * (1.0 + obs);
    if n <= EXACT_LIMIT {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| {
                let s: f64 = d.iter().enumerate().map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v }).sum();
                s.abs() >= obs - tol
            })
            .count();
        return hits as f64 / total as f64;
    }
    let hits = (0..draws)
        .filter(|_| {
            let s: f64 = d.iter().map(|v| if rng.gen::<bool>() { -v } else { *v }).sum();
            s.abs() >= obs - tol
        })
        .count();
    (hits + 1) as f64 / (draws + 1) as f64
}

fn row(
    slot: usize,
    slot_name: &str,
    value: Option<usize>,
    value_name: &str,
    l1: &[f64],
    identity: &[f64],
    cfg: &SweepConfig,
) -> SweepRow {
    let stream = cfg.seed ^ ((slot as u64) << 32) ^ value.map_or(0xffff, |v| v as u64);
    let mut rng = seeded(stream);
    let (mean, variance) = mean_var(l1);
    let (ci_low, ci_high) = bootstrap_ci(l1, cfg.bootstrap, &mut rng);
    let d: Vec<f64> = l1.iter().zip(identity).map(|(a, b)| a - b).collect();
    SweepRow {
        slot,
        slot_name: slot_name.to_string(),
        value,
        value_name: value_name.to_string(),
        n: l1.len(),
        mean,
        variance,
        ci_low,
        ci_high,
        p_value: sign_flip_p(&d, cfg.permutations, &mut rng),
    }
}

/// Runs the sweep over `utterances`, each of which must carry a feature timeline. Generation is
/// deterministic with `seed`, so the identity substitution reproduces the baseline exactly.
pub fn feature_sweep(
    bundle: &ModelBundle,
    utterances: &[Utterance],
    gen: &GenerationConfig,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    if utterances.is_empty() {
        return Err(Error::invalid("sweep needs a non-empty test set"));
    }
    if utterances.iter().any(|u| u.timeline.is_none()) {
        return Err(Error::invalid("sweep needs a feature timeline for every test utterance"));
    }
    if !(cfg.interval_s > 0.0) {
        return Err(Error::invalid("sweep interval must be positive"));
    }
    let cats = bundle.schema.categorical();
    let slots: Vec<usize> = if cfg.slots.is_empty() { (0..cats.len()).collect() } else { cfg.slots.clone() };
    if let Some(bad) = slots.iter().find(|&&s| s >= cats.len()) {
        return Err(Error::invalid(format!("slot {bad} is not categorical")));
    }
    let per = (cfg.interval_s * gen.fps).round() as usize;
    let run = |u: &Utterance| generate(u, gen, bundle, LatentMode::Deterministic, cfg.seed);
    let baseline: Vec<PoseSequence> = utterances.iter().map(run).collect::<Result<_>>()?;
    let l1_all = |variant: &dyn Fn(&Utterance) -> Option<Utterance>| -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (u, base) in utterances.iter().zip(&baseline) {
            match variant(u) {
                Some(v) => out.extend(interval_l1(&run(&v)?, base, per)?),
                None => out.extend(interval_l1(base, base, per)?),
            }
        }
        Ok(out)
    };
    let identity = l1_all(&|u| Some(u.clone()))?;
    let mut rows = Vec::new();
    for &slot in &slots {
        let desc = &cats[slot];
        rows.push(row(slot, &desc.name, None, "<original>", &identity, &identity, cfg));
        for (v, name) in desc.vocabulary.iter().enumerate() {
            let l1 = l1_all(&|u| {
                let tl = u.timeline.as_ref().expect("checked above");
                let sub = substitute(tl, slot, v);
                (sub != *tl).then(|| Utterance { timeline: Some(sub), ..u.clone() })
            })?;
            rows.push(row(slot, &desc.name, Some(v), name, &l1, &identity, cfg));
        }
        log::info!("swept slot {}", desc.name);
    }
    Ok(SweepReport { config: cfg.clone(), intervals: identity.len(), rows })
}

impl SweepReport {
    pub fn rows_for<'a>(&'a self, slot_name: &'a str) -> impl Iterator<Item = &'a SweepRow> {
        self.rows.iter().filter(move |r| r.slot_name == slot_name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["slot", "slot_name", "value", "value_name", "n", "mean", "variance", "ci_low", "ci_high", "p_value"])?;
        for r in &self.rows {
            w.write_record([
                r.slot.to_string(),
                r.slot_name.clone(),
                r.value.map_or(String::new(), |v| v.to_string()),
                r.value_name.clone(),
                r.n.to_string(),
                format!("{:.6e}", r.mean),
                format!("{:.6e}", r.variance),
                format!("{:.6e}", r.ci_low),
                format!("{:.6e}", r.ci_high),
                format!("{:.6}", r.p_value),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// Horizontal bars of mean L1 with 95% whiskers, one per substitution; significant bars are
    /// drawn in red.
    pub fn to_svg(&self) -> String {
        let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.value.is_some()).collect();
        let (label_w, plot_w, row_h, top) = (300.0, 420.0, 14.0, 24.0);
        let height = top + row_h * rows.len() as f64 + 20.0;
        let max = rows.iter().map(|r| r.ci_high.max(r.mean)).fold(0.0f64, f64::max).max(1e-12);
        let x = |v: f64| label_w + plot_w * (v / max).clamp(0.0, 1.0);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="10">"#,
            label_w + plot_w + 20.0
        );
        let _ = writeln!(s, r#"<text x="4" y="14">mean L1 per {} s interval (max {:.4})</text>"#, self.config.interval_s, max);
        for (i, r) in rows.iter().enumerate() {
            let y = top + row_h * i as f64;
            let color = if r.p_value < 0.05 { "#c0392b" } else { "#7f8c8d" };
            let _ = writeln!(s, r#"<text x="4" y="{:.1}">{} = {}</text>"#, y + 10.0, xml(&r.slot_name), xml(&r.value_name));
            let _ = writeln!(
                s,
                r#"<rect x="{label_w}" y="{:.1}" width="{:.2}" height="{:.1}" fill="{color}"/>"#,
                y + 2.0,
                x(r.mean) - label_w,
                row_h - 4.0
            );
            if r.ci_low.is_finite() && r.ci_high.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" x2="{:.2}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                    x(r.ci_low),
                    x(r.ci_high),
                    y + row_h / 2.0,
                    y + row_h / 2.0
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }

    /// `sweep.json`, `sweep.csv` and `sweep.svg` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("sweep.json", serde_json::to_string_pretty(self)?),
            ("sweep.csv", self.to_csv()?),
            ("sweep.svg", self.to_svg()),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_exact() {
        assert_eq!(sign_flip_p(&[0.0; 5], 100, &mut seeded(0)), 1.0);
        // all positive: only the identity and the full flip reach |sum|
        assert_eq!(sign_flip_p(&[1.0, 2.0, 3.0, 4.0, 5.0], 100, &mut seeded(0)), 2.0 / 32.0);
        let p = sign_flip_p(&[1.0, -1.0, 1.0, -1.0], 100, &mut seeded(0));
        assert_eq!(p, 1.0);
        let big: Vec<f64> = (0..40).map(|i| 1.0 + i as f64 * 0.01).collect();
        let p = sign_flip_p(&big, 2000, &mut seeded(1));
        assert!((p - 1.0 / 2001.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let x: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let (lo, hi) = bootstrap_ci(&x, 1000, &mut seeded(2));
        let (m, v) = mean_var(&x);
        assert!(lo < m && m < hi);
        assert!(v > 0.0);
        assert_eq!(bootstrap_ci(&[3.0; 4], 100, &mut seeded(2)), (3.0, 3.0));
    }

    #[test]
    fn substitution_only_touches_labeled_frames() {
        use crate::features::FrameLabels;
        let mut a = FrameLabels::MISSING;
        a.categorical[11] = 2;
        let tl = FeatureTimeline::new(15.0, vec![a, FrameLabels::MISSING]).unwrap();
        let s = substitute(&tl, 11, 4);
        assert_eq!(s.frames()[0].categorical[11], 4);
        assert_eq!(s.frames()[1].categorical[11], MISSING);
        assert_eq!(substitute(&tl, 11, 2), tl);
    }

    #[test]
    fn intervals_cover_sequence() {
        use crate::motion::Skeleton;
        use std::sync::Arc;
        let sk = Arc::new(Skeleton::upper_body());
        let a = PoseSequence::rest(sk.clone(), 15.0, 700).unwrap();
        let b = PoseSequence::new(sk, 15.0, a.frames().mapv(|x| x + 0.5)).unwrap();
        let l = interval_l1(&a, &b, 300).unwrap();
        assert_eq!(l.len(), 3);
        assert!(l.iter().all(|v| (v - 0.5).abs() < 1e-6));
        assert!(interval_l1(&a, &a, 300).unwrap().iter().all(|&v| v == 0.0));
    }
}
