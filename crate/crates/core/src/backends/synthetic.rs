//! Ground-truth-driven detector with a seeded noise model.
//!
//! Per frame the generator is `SplitMix64::for_frame(seed, frame_index)` and
//! draws happen in this fixed order:
//!
//! 1. For each polyp truth box, in annotation order: accept (`uniform() <
//!    p_tp`), four corner jitters (`gaussian()` for x0, y0, x1, y1), score
//!    (`uniform_in(tp_lo, tp_hi)`). All six are drawn even when the box is
//!    rejected.
//! 2. False-positive count: `poisson(fp_rate)`.
//! 3. For each false positive: `below(width)` for x, `below(height)` for y,
//!    then width and height as `round(exp(uniform_in(ln lo, ln hi)))` with
//!    `lo = 8`, `hi = min(width, height) / 2`; then the score
//!    (`uniform_in(fp_lo, fp_hi)`).
//!
//! Jittered corners are `corner + round(jitter_px * g)`, then clamped so the
//! box stays inside the frame with `w, h >= 1`. False positives are clipped
//! at the right and bottom edges.

use serde::{Deserialize, Serialize};

use super::rng::SplitMix64;
use super::{BackendDescriptor, BackendError, DetectorBackend};
use crate::eval::FrameAnnotation;
use crate::geometry::{BoundingBox, Label, ScoredBox, Source};
use crate::media::Frame;

const MIN_FP_EDGE: f64 = 8.0;

/// Noise model of a synthetic detector.
///
/// The score ranges are placeholders: nothing calibrates them against a
/// trained network. They only need to put true positives above false
/// positives often enough for NMS to behave like a real detector's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDetectorConfig {
    pub seed: u64,
    pub p_tp: f64,
    pub fp_rate: f64,
    pub jitter_px: f64,
    pub tp_score_range: [f64; 2],
    pub fp_score_range: [f64; 2],
    pub simulated_latency_ms: f64,
}

impl Default for SyntheticDetectorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            p_tp: 0.9,
            fp_rate: 1.0,
            jitter_px: 2.0,
            tp_score_range: [0.6, 1.0],
            fp_score_range: [0.1, 0.6],
            simulated_latency_ms: 0.0,
        }
    }
}

impl SyntheticDetectorConfig {
    /// Detector that reports every truth box exactly and nothing else.
    pub fn noise_free(seed: u64) -> Self {
        Self {
            seed,
            p_tp: 1.0,
            fp_rate: 0.0,
            jitter_px: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let err = |m: String| Err(BackendError::Config(m));
        if !(0.0..=1.0).contains(&self.p_tp) {
            return err(format!("p_tp {} outside [0, 1]", self.p_tp));
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return err(format!("fp_rate {} must be a finite non-negative mean", self.fp_rate));
        }
        if !(self.jitter_px >= 0.0 && self.jitter_px.is_finite()) {
            return err(format!("jitter_px {} must be finite and >= 0", self.jitter_px));
        }
        for (name, [lo, hi]) in [
            ("tp_score_range", self.tp_score_range),
            ("fp_score_range", self.fp_score_range),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return err(format!("{name} [{lo}, {hi}] is not a sub-interval of [0, 1]"));
            }
        }
        if !(self.simulated_latency_ms >= 0.0 && self.simulated_latency_ms.is_finite()) {
            return err(format!(
                "simulated_latency_ms {} must be >= 0",
                self.simulated_latency_ms
            ));
        }
        Ok(())
    }
}

fn jitter(rng: &mut SplitMix64, sigma: f64) -> i64 {
    (sigma * rng.gaussian()).round() as i64
}

/// Detections for one frame. Deterministic in `(config, frame_index, truth,
/// extent)`.
pub fn synthetic_detect(
    config: &SyntheticDetectorConfig,
    frame_index: u64,
    truth: Option<&FrameAnnotation>,
    width: u32,
    height: u32,
    source: Source,
) -> Result<Vec<ScoredBox>, BackendError> {
    config.validate()?;
    if width == 0 || height == 0 {
        return Err(BackendError::Config(format!("frame extent {width}x{height} is empty")));
    }
    let mut rng = SplitMix64::for_frame(config.seed, frame_index);
    let mut out = Vec::new();
    let (w_max, h_max) = (i64::from(width), i64::from(height));

    for gt in truth.into_iter().flat_map(|t| t.polyp_boxes()) {
        gt.check_within(width, height)
            .map_err(|e| BackendError::Config(format!("truth box on frame {frame_index}: {e}")))?;
        let accepted = rng.uniform() < config.p_tp;
        let dx0 = jitter(&mut rng, config.jitter_px);
        let dy0 = jitter(&mut rng, config.jitter_px);
        let dx1 = jitter(&mut rng, config.jitter_px);
        let dy1 = jitter(&mut rng, config.jitter_px);
        let score = rng.uniform_in(config.tp_score_range[0], config.tp_score_range[1]);
        if !accepted {
            continue;
        }
        let x0 = (i64::from(gt.x()) + dx0).clamp(0, w_max - 1);
        let y0 = (i64::from(gt.y()) + dy0).clamp(0, h_max - 1);
        let x1 = (i64::from(gt.right()) + dx1).clamp(x0 + 1, w_max);
        let y1 = (i64::from(gt.bottom()) + dy1).clamp(y0 + 1, h_max);
        let bbox = BoundingBox::from_corners(x0 as u32, y0 as u32, x1 as u32, y1 as u32)
            .expect("clamped corners form a non-empty box");
        out.push(ScoredBox::new(bbox, score, source, Label::Polyp).expect("score drawn inside [0, 1]"));
    }

    let n_fp = rng.poisson(config.fp_rate);
    let hi = (f64::from(width.min(height)) / 2.0).max(1.0);
    let lo = MIN_FP_EDGE.min(hi);
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    for _ in 0..n_fp {
        let x = rng.below(u64::from(width)) as u32;
        let y = rng.below(u64::from(height)) as u32;
        let w = rng.uniform_in(ln_lo, ln_hi).exp().round() as u32;
        let h = rng.uniform_in(ln_lo, ln_hi).exp().round() as u32;
        let score = rng.uniform_in(config.fp_score_range[0], config.fp_score_range[1]);
        let w = w.clamp(1, width - x);
        let h = h.clamp(1, height - y);
        let bbox = BoundingBox::new(x, y, w, h).expect("clipped box is non-empty");
        out.push(ScoredBox::new(bbox, score, source, Label::Polyp).expect("score drawn inside [0, 1]"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    config: SyntheticDetectorConfig,
    source: Source,
    name: String,
}

impl SyntheticDetector {
    pub fn new(config: SyntheticDetectorConfig, source: Source) -> Result<Self, BackendError> {
        config.validate()?;
        let name = format!("synthetic(seed={})", config.seed);
        Ok(Self { config, source, name })
    }

    pub fn config(&self) -> &SyntheticDetectorConfig {
        &self.config
    }
}

impl DetectorBackend for SyntheticDetector {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: self.name.clone(),
            simulated_latency_ms: self.config.simulated_latency_ms,
        }
    }

    fn detect(&mut self, frame: &Frame, truth: Option<&FrameAnnotation>) -> Result<Vec<ScoredBox>, BackendError> {
        synthetic_detect(
            &self.config,
            frame.frame_index,
            truth,
            frame.width,
            frame.height,
            self.source,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::AnnotatedBox;
    use crate::geometry::iou;

    const W: u32 = 384;
    const H: u32 = 288;

    fn one_polyp(frame_index: u64) -> FrameAnnotation {
        FrameAnnotation {
            video_id: "v".into(),
            frame_index,
            boxes: vec![AnnotatedBox {
                bbox: BoundingBox::new(150, 100, 60, 50).unwrap(),
                label: Label::Polyp,
            }],
        }
    }

    fn run(cfg: &SyntheticDetectorConfig, frames: u64) -> Vec<Vec<ScoredBox>> {
        (0..frames)
            .map(|f| synthetic_detect(cfg, f, Some(&one_polyp(f)), W, H, Source::DetectorA).unwrap())
            .collect()
    }

    #[test]
    fn noise_free_limit_reproduces_truth() {
        for out in run(&SyntheticDetectorConfig::noise_free(3), 50) {
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].bbox, BoundingBox::new(150, 100, 60, 50).unwrap());
        }
    }

    #[test]
    fn silent_detector() {
        let cfg = SyntheticDetectorConfig {
            p_tp: 0.0,
            fp_rate: 0.0,
            ..SyntheticDetectorConfig::default()
        };
        assert!(run(&cfg, 50).iter().all(Vec::is_empty));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = [
            SyntheticDetectorConfig {
                p_tp: 1.5,
                ..Default::default()
            },
            SyntheticDetectorConfig {
                fp_rate: -1.0,
                ..Default::default()
            },
            SyntheticDetectorConfig {
                jitter_px: f64::NAN,
                ..Default::default()
            },
            SyntheticDetectorConfig {
                tp_score_range: [0.9, 0.2],
                ..Default::default()
            },
            SyntheticDetectorConfig {
                fp_score_range: [0.0, 1.2],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(BackendError::Config(_))), "{cfg:?}");
            assert!(SyntheticDetector::new(cfg, Source::DetectorA).is_err());
        }
    }

    #[test]
    fn rates_converge() {
        let cfg = SyntheticDetectorConfig {
            seed: 11,
            p_tp: 0.9,
            fp_rate: 1.0,
            jitter_px: 0.0,
            ..Default::default()
        };
        let gt = BoundingBox::new(150, 100, 60, 50).unwrap();
        let n = 10_000;
        let (mut tp, mut fp) = (0usize, 0usize);
        for f in 0..n {
            let out = synthetic_detect(&cfg, f, Some(&one_polyp(f)), W, H, Source::DetectorA).unwrap();
            // With zero jitter the true positive is the first box, exactly.
            let hit = out.first().is_some_and(|b| b.bbox == gt && b.score >= 0.6);
            tp += usize::from(hit);
            fp += out.len() - usize::from(hit);
        }
        let tp_frac = tp as f64 / n as f64;
        let fp_mean = fp as f64 / n as f64;
        assert!((tp_frac - 0.9).abs() <= 0.01, "{tp_frac}");
        assert!((fp_mean - 1.0).abs() <= 0.05, "{fp_mean}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = SyntheticDetectorConfig {
            seed: 5,
            ..Default::default()
        };
        let b = SyntheticDetectorConfig {
            seed: 6,
            ..Default::default()
        };
        let ra = serde_json::to_string(&run(&a, 100)).unwrap();
        assert_eq!(ra, serde_json::to_string(&run(&a, 100)).unwrap());
        assert_ne!(ra, serde_json::to_string(&run(&b, 100)).unwrap());
    }

    /// Two seeds behave like independent detectors: the rate at which their
    /// false positives coincide (IoU > 0.1) on the same frame matches the
    /// rate against a frame-shifted partner, which is independent by
    /// construction. The absolute rate (about 0.02 for this box model) was
    /// cross-checked with a separate floating-point simulation.
    #[test]
    fn false_positives_of_independent_seeds_coincide_at_chance() {
        let mk = |seed| SyntheticDetectorConfig {
            seed,
            p_tp: 0.0,
            fp_rate: 1.0,
            ..Default::default()
        };
        let (a, b) = (mk(1), mk(2));
        let n = 20_000u64;
        let coincide =
            |x: &[ScoredBox], y: &[ScoredBox]| x.iter().any(|p| y.iter().any(|q| iou(&p.bbox, &q.bbox) > 0.1));
        let (mut same, mut shifted) = (0u32, 0u32);
        for f in 0..n {
            let oa = synthetic_detect(&a, f, None, W, H, Source::DetectorA).unwrap();
            let ob = synthetic_detect(&b, f, None, W, H, Source::DetectorB).unwrap();
            let ob_next = synthetic_detect(&b, f + n, None, W, H, Source::DetectorB).unwrap();
            same += u32::from(coincide(&oa, &ob));
            shifted += u32::from(coincide(&oa, &ob_next));
        }
        let (p, q) = (f64::from(same) / n as f64, f64::from(shifted) / n as f64);
        let sigma = (2.0 * q * (1.0 - q) / n as f64).sqrt();
        assert!((p - q).abs() < 4.0 * sigma, "same-frame {p} vs shifted {q}");
        assert!((0.015..0.025).contains(&p), "{p}");
    }

    #[test]
    fn boxes_stay_inside_small_frames() {
        let cfg = SyntheticDetectorConfig {
            fp_rate: 5.0,
            jitter_px: 30.0,
            ..Default::default()
        };
        for f in 0..500 {
            let t = FrameAnnotation {
                video_id: "v".into(),
                frame_index: f,
                boxes: vec![AnnotatedBox {
                    bbox: BoundingBox::new(0, 0, 5, 5).unwrap(),
                    label: Label::Polyp,
                }],
            };
            for b in synthetic_detect(&cfg, f, Some(&t), 12, 10, Source::DetectorB).unwrap() {
                assert!(b.bbox.fits_within(12, 10), "{}", b.bbox);
            }
        }
    }
}
