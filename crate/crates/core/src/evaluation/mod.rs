//! Distribution and per-joint metrics, the substitution sweep and the ablation runner.

mod ablation;
mod embed;
mod metrics;
mod sweep;

pub use ablation::{ablation_run, AblationConfig, AblationRow, AblationTable, Variant};
pub use embed::{EmbedConfig, EmbedManifest, EmbeddingNet, EMBED_SCHEMA_VERSION};
pub use metrics::{diversity, fgd, maje};
pub use sweep::{
    bootstrap_ci, feature_sweep, interval_l1, mean_var, sign_flip_p, substitute, SweepConfig, SweepReport, SweepRow,
    HANDEDNESS_SLOT,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::config_hash;
use crate::motion::PoseSequence;
use crate::nn::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub diversity_pairs: usize,
    pub diversity_trials: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { diversity_pairs: 100, diversity_trials: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fgd: f64,
    pub diversity: f64,
    /// Mean over paired sequences; absent when the two sets do not pair up.
    pub maje: Option<f64>,
    pub generated_windows: usize,
    pub reference_windows: usize,
    pub config: EvalConfig,
    pub config_hash: String,
}

/// FGD and diversity on non-overlapping embedding windows, MAJE when the sets pair up one to one
/// with equal shapes.
pub fn evaluate(
    generated: &[&PoseSequence],
    reference: &[&PoseSequence],
    net: &EmbeddingNet,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let zg = net.embed_set(generated)?;
    let zr = net.embed_set(reference)?;
    if zg.is_empty() || zr.is_empty() {
        return Err(Error::invalid(format!(
            "no sequence reaches the {}-frame embedding window",
            net.config().window
        )));
    }
    let fgd = fgd(&zg, &zr)?;
    let diversity = if zg.len() >= 2 {
        diversity(&zg, cfg.diversity_pairs, cfg.diversity_trials, &mut seeded(cfg.seed))?
    } else {
        log::warn!("a single generated window, diversity is 0");
        0.0
    };
    let paired = generated.len() == reference.len()
        && generated.iter().zip(reference).all(|(a, b)| a.frames().dim() == b.frames().dim());
    let maje = if paired {
        let mut total = 0.0;
        for (a, b) in generated.iter().zip(reference) {
            total += maje(a, b)?;
        }
        Some(total / generated.len() as f64)
    } else {
        None
    };
    Ok(MetricReport {
        fgd,
        diversity,
        maje,
        generated_windows: zg.len(),
        reference_windows: zr.len(),
        config: cfg.clone(),
        config_hash: config_hash(&(cfg, net.config())),
    })
}
