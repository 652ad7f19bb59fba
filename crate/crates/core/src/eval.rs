//! Ground-truth matching and video-level metrics: precision/recall/F-scores,
//! time to first detection, false-positive incidents and their CDF.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoundingBox, Label, ScoredBox};

pub const DEFAULT_IOU_MATCH_THRESHOLD: f64 = 0.5;
/// Six frames, i.e. 100 ms at 60 fps.
pub const DEFAULT_MERGE_WINDOW_FRAMES: u64 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A ground-truth box with its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub label: Label,
}

/// Ground truth for one frame of one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub video_id: String,
    pub frame_index: u64,
    pub boxes: Vec<AnnotatedBox>,
}

impl FrameAnnotation {
    pub fn polyp_boxes(&self) -> impl Iterator<Item = &BoundingBox> {
        self.boxes.iter().filter(|b| b.label == Label::Polyp).map(|b| &b.bbox)
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<(), crate::geometry::GeometryError> {
        self.boxes.iter().try_for_each(|b| b.bbox.check_within(width, height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchCriterion {
    #[default]
    Iou,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub criterion: MatchCriterion,
    pub iou_match_threshold: f64,
    /// Classes that take part in matching; others are ignored on both sides.
    pub classes: Vec<Label>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            criterion: MatchCriterion::Iou,
            iou_match_threshold: DEFAULT_IOU_MATCH_THRESHOLD,
            classes: vec![Label::Polyp],
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_match_threshold > 0.0 && self.iou_match_threshold <= 1.0) {
            return Err(EvalError::InvalidArgument(format!(
                "iou_match_threshold {} outside (0, 1]",
                self.iou_match_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

fn eligible(pred: &BoundingBox, truth: &BoundingBox, cfg: &MatchConfig) -> bool {
    match cfg.criterion {
        MatchCriterion::Iou => iou(pred, truth) >= cfg.iou_match_threshold,
        MatchCriterion::Centroid => {
            let (cx, cy) = pred.doubled_center();
            let x0 = 2 * u64::from(truth.x());
            let y0 = 2 * u64::from(truth.y());
            cx >= x0 && cx <= 2 * u64::from(truth.right()) && cy >= y0 && cy <= 2 * u64::from(truth.bottom())
        }
    }
}

/// Greedy one-to-one matching of predictions to ground truth.
///
/// Predictions are visited by descending score (stable for equal scores);
/// each takes the still-unmatched eligible truth box with the highest IoU
/// (lowest index on ties).
pub fn match_boxes(predictions: &[ScoredBox], truth: &[AnnotatedBox], cfg: &MatchConfig) -> ConfusionCounts {
    let preds: Vec<&ScoredBox> = predictions.iter().filter(|p| cfg.classes.contains(&p.label)).collect();
    let gts: Vec<&BoundingBox> = truth
        .iter()
        .filter(|t| cfg.classes.contains(&t.label))
        .map(|t| &t.bbox)
        .collect();

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].score.total_cmp(&preds[i].score).then(i.cmp(&j)));

    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for i in order {
        let p = &preds[i].bbox;
        let best = gts
            .iter()
            .enumerate()
            .filter(|&(g, t)| !taken[g] && eligible(p, t, cfg))
            .map(|(g, t)| (g, iou(p, t)))
            .fold(None::<(usize, f64)>, |best, (g, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((g, v)),
            });
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    ConfusionCounts {
        tp,
        fp: preds.len() as u64 - tp,
        fn_: gts.len() as u64 - tp,
    }
}

/// [`match_boxes`] against one frame's annotation; `None` means no truth.
pub fn match_frame(predictions: &[ScoredBox], truth: Option<&FrameAnnotation>, cfg: &MatchConfig) -> ConfusionCounts {
    match truth {
        Some(t) => match_boxes(predictions, &t.boxes, cfg),
        None => match_boxes(predictions, &[], cfg),
    }
}

/// Precision, recall, F1 and F2 in percent. `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
}

fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / den
    }
}

/// Precision is undefined without predictions, recall without truth, and
/// the F-scores whenever either is undefined. When both are defined and
/// zero the F-scores are 0.
pub fn prf(counts: ConfusionCounts) -> Prf {
    let precision = (counts.tp + counts.fp > 0).then(|| counts.tp as f64 / (counts.tp + counts.fp) as f64);
    let recall = (counts.tp + counts.fn_ > 0).then(|| counts.tp as f64 / (counts.tp + counts.fn_) as f64);
    let both = precision.zip(recall);
    Prf {
        precision: precision.map(|v| 100.0 * v),
        recall: recall.map(|v| 100.0 * v),
        f1: both.map(|(p, r)| 100.0 * f_beta(p, r, 1.0)),
        f2: both.map(|(p, r)| 100.0 * f_beta(p, r, 2.0)),
    }
}

/// Time-to-first-detection outcome for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub first_appearance_frame: u64,
    pub detection_frame: Option<u64>,
    pub fps: f64,
}

impl ClipRecord {
    pub fn delay_seconds(&self) -> Option<f64> {
        self.detection_frame
            .map(|d| (d - self.first_appearance_frame) as f64 / self.fps)
    }
}

/// First frame at or after the polyp's first annotated appearance where the
/// detections produce at least one true positive.
///
/// `annotations` and `detections` are keyed by frame index; frames missing
/// from `detections` count as having no output.
pub fn time_to_first_detection(
    clip_id: &str,
    annotations: &BTreeMap<u64, FrameAnnotation>,
    detections: &BTreeMap<u64, Vec<ScoredBox>>,
    fps: f64,
    cfg: &MatchConfig,
) -> Result<ClipRecord, EvalError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(EvalError::InvalidArgument(format!("fps must be positive, got {fps}")));
    }
    let first = annotations
        .iter()
        .find(|(_, a)| a.boxes.iter().any(|b| cfg.classes.contains(&b.label)))
        .map(|(&f, _)| f)
        .ok_or_else(|| EvalError::InvalidArgument(format!("clip {clip_id} has no annotated polyp")))?;
    let detection_frame = detections
        .range(first..)
        .find(|(f, preds)| match_frame(preds, annotations.get(f), cfg).tp >= 1)
        .map(|(&f, _)| f);
    Ok(ClipRecord {
        clip_id: clip_id.to_owned(),
        first_appearance_frame: first,
        detection_frame,
        fps,
    })
}

/// Fraction of clips whose detection delay is at most `horizon_seconds`.
/// Missed clips never count. `None` for an empty record set.
pub fn recall_at(records: &[ClipRecord], horizon_seconds: f64) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let hit = records
        .iter()
        .filter(|r| r.delay_seconds().is_some_and(|d| d <= horizon_seconds))
        .count();
    Some(hit as f64 / records.len() as f64)
}

/// Counts false-positive incidents: a frame opens a new incident iff it lies
/// more than `merge_window_frames` after the previous false-positive frame.
pub fn fp_incidents(fp_frames: &[u64], merge_window_frames: u64) -> Result<u64, EvalError> {
    if let Some(w) = fp_frames.windows(2).find(|w| w[1] < w[0]) {
        return Err(EvalError::InvalidArgument(format!(
            "false-positive frames not sorted: {} before {}",
            w[0], w[1]
        )));
    }
    let mut incidents = 0;
    let mut prev: Option<u64> = None;
    for &f in fp_frames {
        if prev.is_none_or(|p| f - p > merge_window_frames) {
            incidents += 1;
        }
        prev = Some(f);
    }
    Ok(incidents)
}

pub fn fp_per_minute(incidents: u64, duration_frames: u64, fps: f64) -> Result<f64, EvalError> {
    if duration_frames == 0 {
        return Err(EvalError::InvalidArgument("zero-length video".into()));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(EvalError::InvalidArgument(format!("fps must be positive, got {fps}")));
    }
    let minutes = duration_frames as f64 / fps / 60.0;
    Ok(incidents as f64 / minutes)
}

/// Empirical CDF as `(value, fraction of values <= value)` at each distinct
/// value, ascending. `None` for empty input.
pub fn ecdf(values: &[f64]) -> Option<Vec<(f64, f64)>> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    Some(out)
}
