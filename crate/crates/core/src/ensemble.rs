//! Two-detector ensemble rules.
//!
//! * AND: a box survives only if the other detector produced a box with IoU
//!   strictly above the threshold; confirmed boxes from both sides are then
//!   reduced with NMS at the same threshold.
//! * Size-aware: detector-A boxes whose short edge is small relative to the
//!   frame pass straight through; the rest go through the AND rule. Detector
//!   B only runs when A produced at least one large box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, nms, short_edge_ratio, GeometryError, ScoredBox, Source};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.1;
pub const DEFAULT_SHORT_EDGE_RATIO_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid ensemble config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    And,
    SizeAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub iou_threshold: f64,
    pub mode: EnsembleMode,
    /// Only read in size-aware mode.
    pub short_edge_ratio_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            mode: EnsembleMode::And,
            short_edge_ratio_threshold: DEFAULT_SHORT_EDGE_RATIO_THRESHOLD,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(EnsembleError::Config(format!(
                "iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        if !(self.short_edge_ratio_threshold > 0.0 && self.short_edge_ratio_threshold <= 1.0) {
            return Err(EnsembleError::Config(format!(
                "short_edge_ratio_threshold {} outside (0, 1]",
                self.short_edge_ratio_threshold
            )));
        }
        Ok(())
    }
}

fn confirmed<'a>(mine: &'a [ScoredBox], theirs: &'a [ScoredBox], t: f64) -> impl Iterator<Item = ScoredBox> + 'a {
    mine.iter()
        .filter(move |m| theirs.iter().any(|o| iou(&m.bbox, &o.bbox) > t))
        .copied()
}

/// Confirmed boxes after NMS, still carrying their original source tags.
fn and_untagged(a: &[ScoredBox], b: &[ScoredBox], t: f64) -> Vec<ScoredBox> {
    let pool: Vec<ScoredBox> = confirmed(a, b, t).chain(confirmed(b, a, t)).collect();
    nms(&pool, t)
}

fn retag(boxes: Vec<ScoredBox>) -> Vec<ScoredBox> {
    boxes.into_iter().map(|b| b.with_source(Source::Ensemble)).collect()
}

/// AND ensemble of two detectors' outputs; result tagged [`Source::Ensemble`].
pub fn and_ensemble(a: &[ScoredBox], b: &[ScoredBox], cfg: &EnsembleConfig) -> Vec<ScoredBox> {
    retag(and_untagged(a, b, cfg.iou_threshold))
}

/// Size-aware ensemble. `run_b` is called at most once, and only when some
/// detector-A box has a short-edge ratio at or above the threshold.
///
/// Returns the detections and whether detector B ran.
pub fn size_aware_ensemble<E>(
    a: &[ScoredBox],
    run_b: impl FnOnce() -> Result<Vec<ScoredBox>, E>,
    image_w: u32,
    image_h: u32,
    cfg: &EnsembleConfig,
) -> Result<(Vec<ScoredBox>, bool), E>
where
    E: From<EnsembleError>,
{
    let mut small = Vec::new();
    let mut large = Vec::new();
    for b in a {
        let ratio = short_edge_ratio(&b.bbox, image_w, image_h).map_err(EnsembleError::from)?;
        if ratio < cfg.short_edge_ratio_threshold {
            small.push(*b);
        } else {
            large.push(*b);
        }
    }
    if large.is_empty() {
        return Ok((retag(nms(&small, cfg.iou_threshold)), false));
    }
    let b = run_b()?;
    small.extend(and_untagged(&large, &b, cfg.iou_threshold));
    Ok((retag(nms(&small, cfg.iou_threshold)), true))
}
