//! Per-frame orchestration: blur gate, the two detectors, the ensemble, and
//! stage latency accounting.
//!
//! Latencies are reported on the pipeline clock. A stage is charged its
//! measured duration (wall clock mode only) plus the simulated cost its
//! backend declares, so a synthetic backend can stand in for a 20 ms network
//! without the run actually sleeping. In parallel mode the detector section
//! is charged `max(detector_a, detector_b)`.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, BlurClassifier, DetectorBackend, Endpoint, ExternalBlurClassifier, ExternalDetector,
    HeuristicBlurGate, SyntheticDetector, SyntheticDetectorConfig,
};
use crate::ensemble::{and_ensemble, size_aware_ensemble, EnsembleConfig, EnsembleError, EnsembleMode};
use crate::eval::FrameAnnotation;
use crate::geometry::{ScoredBox, Source};
use crate::media::{Frame, StreamError, DEFAULT_BLUR_THRESHOLD};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Sequential,
    Parallel,
}

/// `Wall` charges measured time plus simulated costs; `Simulated` charges
/// simulated costs only, which makes the latency fields reproducible and is
/// therefore the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    #[default]
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GateConfig {
    Heuristic {
        #[serde(default = "default_blur_threshold")]
        threshold: f64,
        #[serde(default)]
        simulated_latency_ms: f64,
    },
    External {
        endpoint: Endpoint,
    },
    Disabled,
}

fn default_blur_threshold() -> f64 {
    DEFAULT_BLUR_THRESHOLD
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig::Heuristic {
            threshold: DEFAULT_BLUR_THRESHOLD,
            simulated_latency_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Synthetic(SyntheticDetectorConfig),
    External { endpoint: Endpoint },
}

impl BackendConfig {
    fn build(&self, source: Source) -> Result<Box<dyn DetectorBackend>, BackendError> {
        Ok(match self {
            BackendConfig::Synthetic(cfg) => Box::new(SyntheticDetector::new(cfg.clone(), source)?),
            BackendConfig::External { endpoint } => Box::new(ExternalDetector::new(endpoint.clone(), source)?),
        })
    }
}

/// Mirrors the JSON configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub gate: GateConfig,
    pub detector_a: BackendConfig,
    pub detector_b: BackendConfig,
    pub ensemble: EnsembleConfig,
    pub execution: ExecutionMode,
    pub clock: ClockMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gate: GateConfig::default(),
            detector_a: BackendConfig::Synthetic(SyntheticDetectorConfig {
                seed: 1,
                ..SyntheticDetectorConfig::default()
            }),
            detector_b: BackendConfig::Synthetic(SyntheticDetectorConfig {
                seed: 2,
                ..SyntheticDetectorConfig::default()
            }),
            ensemble: EnsembleConfig::default(),
            execution: ExecutionMode::Sequential,
            clock: ClockMode::Simulated,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.ensemble.validate()?;
        match &self.gate {
            GateConfig::Heuristic {
                threshold,
                simulated_latency_ms,
            } => {
                if !threshold.is_finite() || !(*simulated_latency_ms >= 0.0 && simulated_latency_ms.is_finite()) {
                    return Err(PipelineError::Config(
                        "heuristic gate needs a finite threshold and a non-negative latency".into(),
                    ));
                }
            }
            GateConfig::External { .. } | GateConfig::Disabled => {}
        }
        for slot in [&self.detector_a, &self.detector_b] {
            if let BackendConfig::Synthetic(cfg) = slot {
                cfg.validate()?;
            }
        }
        Ok(())
    }
}

/// Per-stage latencies in milliseconds; absent stages did not run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatencies {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<f64>,
    pub total_wall: f64,
}

impl StageLatencies {
    fn stages(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("gate", self.gate),
            ("detector_a", self.detector_a),
            ("detector_b", self.detector_b),
            ("ensemble", self.ensemble),
            ("total_wall", Some(self.total_wall)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub frame_index: u64,
    pub blurry: bool,
    pub detections: Vec<ScoredBox>,
    pub stage_latencies: StageLatencies,
    /// Set when a backend or the frame source failed for this frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PipelineResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn elapsed_ms(clock: ClockMode, since: Instant) -> f64 {
    match clock {
        ClockMode::Wall => since.elapsed().as_secs_f64() * 1e3,
        ClockMode::Simulated => 0.0,
    }
}

/// Runs a detector and returns its output together with the measured and
/// charged durations.
fn timed_detect(
    clock: ClockMode,
    backend: &mut dyn DetectorBackend,
    frame: &Frame,
    truth: Option<&FrameAnnotation>,
) -> (Result<Vec<ScoredBox>, BackendError>, f64, f64) {
    let start = Instant::now();
    let out = backend.detect(frame, truth);
    let measured = elapsed_ms(clock, start);
    let desc = backend.descriptor();
    let out = out.map_err(|e| e.on_frame(&desc.name, frame.frame_index));
    (out, measured, measured + desc.simulated_latency_ms)
}

pub struct Pipeline {
    gate: Option<Box<dyn BlurClassifier>>,
    detector_a: Box<dyn DetectorBackend>,
    detector_b: Box<dyn DetectorBackend>,
    ensemble: EnsembleConfig,
    execution: ExecutionMode,
    clock: ClockMode,
}

impl Pipeline {
    pub fn new(
        gate: Option<Box<dyn BlurClassifier>>,
        detector_a: Box<dyn DetectorBackend>,
        detector_b: Box<dyn DetectorBackend>,
        ensemble: EnsembleConfig,
        execution: ExecutionMode,
        clock: ClockMode,
    ) -> Result<Self, PipelineError> {
        ensemble.validate()?;
        Ok(Self {
            gate,
            detector_a,
            detector_b,
            ensemble,
            execution,
            clock,
        })
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let gate: Option<Box<dyn BlurClassifier>> = match &cfg.gate {
            GateConfig::Heuristic {
                threshold,
                simulated_latency_ms,
            } => Some(Box::new(HeuristicBlurGate {
                threshold: *threshold,
                simulated_latency_ms: *simulated_latency_ms,
            })),
            GateConfig::External { endpoint } => Some(Box::new(ExternalBlurClassifier::new(endpoint.clone())?)),
            GateConfig::Disabled => None,
        };
        Self::new(
            gate,
            cfg.detector_a.build(Source::DetectorA)?,
            cfg.detector_b.build(Source::DetectorB)?,
            cfg.ensemble.clone(),
            cfg.execution,
            cfg.clock,
        )
    }

    pub fn execution(&self) -> ExecutionMode {
        self.execution
    }

    /// Processes one frame. Backend failures are recorded in the result's
    /// `error` field rather than returned.
    pub fn process_frame(&mut self, frame: &Frame, truth: Option<&FrameAnnotation>) -> PipelineResult {
        let start = Instant::now();
        let clock = self.clock;
        // Simulated time charged so far on the critical path.
        let mut charged = 0.0;
        let mut lat = StageLatencies::default();
        let mut result = PipelineResult {
            frame_index: frame.frame_index,
            blurry: false,
            detections: Vec::new(),
            stage_latencies: StageLatencies::default(),
            error: None,
        };
        let finish = |mut result: PipelineResult, mut lat: StageLatencies, charged: f64| {
            lat.total_wall = elapsed_ms(clock, start) + charged;
            result.stage_latencies = lat;
            result
        };

        if let Some(gate) = self.gate.as_mut() {
            let t = Instant::now();
            let verdict = gate.classify(frame);
            let desc = gate.descriptor();
            lat.gate = Some(elapsed_ms(clock, t) + desc.simulated_latency_ms);
            charged += desc.simulated_latency_ms;
            match verdict {
                Ok(v) if v.is_blurry() => {
                    result.blurry = true;
                    return finish(result, lat, charged);
                }
                Ok(_) => {}
                Err(e) => {
                    result.error = Some(e.on_frame(&desc.name, frame.frame_index).to_string());
                    return finish(result, lat, charged);
                }
            }
        }

        let detections = match self.ensemble.mode {
            EnsembleMode::And => self.run_and(frame, truth, &mut lat, &mut charged),
            EnsembleMode::SizeAware => self.run_size_aware(frame, truth, &mut lat, &mut charged),
        };
        match detections {
            Ok(d) => result.detections = d,
            Err(e) => result.error = Some(e.to_string()),
        }
        finish(result, lat, charged)
    }

    fn run_and(
        &mut self,
        frame: &Frame,
        truth: Option<&FrameAnnotation>,
        lat: &mut StageLatencies,
        charged: &mut f64,
    ) -> Result<Vec<ScoredBox>, PipelineError> {
        let clock = self.clock;
        let ((a, _, da), (b, _, db)) = match self.execution {
            ExecutionMode::Sequential => {
                let ra = timed_detect(clock, self.detector_a.as_mut(), frame, truth);
                let rb = timed_detect(clock, self.detector_b.as_mut(), frame, truth);
                *charged += (ra.2 - ra.1) + (rb.2 - rb.1);
                (ra, rb)
            }
            ExecutionMode::Parallel => {
                let (det_a, det_b) = (&mut self.detector_a, &mut self.detector_b);
                let (ra, rb) = std::thread::scope(|s| {
                    let hb = s.spawn(|| timed_detect(clock, det_b.as_mut(), frame, truth));
                    let ra = timed_detect(clock, det_a.as_mut(), frame, truth);
                    (ra, hb.join().expect("detector thread panicked"))
                });
                // Measured time of the section is already on the wall clock;
                // charge the remainder of the longer branch.
                *charged += ra.2.max(rb.2) - ra.1.max(rb.1);
                (ra, rb)
            }
        };
        lat.detector_a = Some(da);
        lat.detector_b = Some(db);
        let (a, b) = (a?, b?);
        let t = Instant::now();
        let out = and_ensemble(&a, &b, &self.ensemble);
        lat.ensemble = Some(elapsed_ms(clock, t));
        Ok(out)
    }

    fn run_size_aware(
        &mut self,
        frame: &Frame,
        truth: Option<&FrameAnnotation>,
        lat: &mut StageLatencies,
        charged: &mut f64,
    ) -> Result<Vec<ScoredBox>, PipelineError> {
        let clock = self.clock;
        let (a, real_a, da) = timed_detect(clock, self.detector_a.as_mut(), frame, truth);
        lat.detector_a = Some(da);
        *charged += da - real_a;
        let a = a?;

        let t = Instant::now();
        let mut b_cost: Option<(f64, f64)> = None;
        let detector_b = &mut self.detector_b;
        let outcome = size_aware_ensemble::<PipelineError>(
            &a,
            || {
                let (b, real_b, db) = timed_detect(clock, detector_b.as_mut(), frame, truth);
                b_cost = Some((real_b, db));
                Ok(b?)
            },
            frame.width,
            frame.height,
            &self.ensemble,
        );
        let mut ensemble_ms = elapsed_ms(clock, t);
        if let Some((real_b, db)) = b_cost {
            lat.detector_b = Some(db);
            *charged += db - real_b;
            ensemble_ms = (ensemble_ms - real_b).max(0.0);
        }
        let (out, _) = outcome?;
        lat.ensemble = Some(ensemble_ms);
        Ok(out)
    }

    /// Runs every frame of `frames` in order and hands each result to `sink`.
    /// Unreadable frames are reported as failed results, not fatal errors.
    pub fn process_stream<I, F>(&mut self, frames: I, truth: &BTreeMap<u64, FrameAnnotation>, mut sink: F) -> RunSummary
    where
        I: IntoIterator<Item = Result<Frame, StreamError>>,
        F: FnMut(&PipelineResult),
    {
        let mut summary = RunSummary::default();
        let mut latencies = LatencyRecorder::default();
        for item in frames {
            let result = match item {
                Ok(frame) => self.process_frame(&frame, truth.get(&frame.frame_index)),
                Err(e) => {
                    summary.decode_errors += 1;
                    PipelineResult {
                        frame_index: e.frame_index,
                        blurry: false,
                        detections: Vec::new(),
                        stage_latencies: StageLatencies::default(),
                        error: Some(e.to_string()),
                    }
                }
            };
            summary.frames += 1;
            summary.blurry += u64::from(result.blurry);
            summary.failed += u64::from(result.failed());
            if !result.failed() {
                latencies.record(&result.stage_latencies);
            }
            sink(&result);
        }
        summary.latency = latencies.report();
        summary
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub count: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl StageStats {
    /// Nearest-rank percentiles over `samples`.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(Self {
            count: n as u64,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            max_ms: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyReport {
    pub stages: BTreeMap<String, StageStats>,
    pub frames: u64,
    /// Frames per second of pipeline-clock time.
    pub throughput_fps: f64,
}

#[derive(Debug, Default)]
pub struct LatencyRecorder {
    samples: BTreeMap<&'static str, Vec<f64>>,
}

impl LatencyRecorder {
    pub fn record(&mut self, lat: &StageLatencies) {
        for (name, v) in lat.stages() {
            if let Some(v) = v {
                self.samples.entry(name).or_default().push(v);
            }
        }
    }

    pub fn report(&self) -> LatencyReport {
        let totals = self.samples.get("total_wall").map(Vec::as_slice).unwrap_or(&[]);
        let total_ms: f64 = totals.iter().sum();
        LatencyReport {
            stages: self
                .samples
                .iter()
                .filter_map(|(k, v)| StageStats::from_samples(v).map(|s| (k.to_string(), s)))
                .collect(),
            frames: totals.len() as u64,
            throughput_fps: if total_ms > 0.0 {
                totals.len() as f64 / (total_ms / 1e3)
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: u64,
    pub blurry: u64,
    pub failed: u64,
    pub decode_errors: u64,
    pub latency: LatencyReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Counted, InvocationCounter};
    use crate::eval::AnnotatedBox;
    use crate::geometry::{BoundingBox, Label};
    use crate::media::MediaError;

    const W: u32 = 64;
    const H: u32 = 48;

    fn textured(frame_index: u64) -> Frame {
        let pixels = (0..W * H)
            .flat_map(|i| {
                let v = if (i % W + i / W).is_multiple_of(2) { 30 } else { 220 };
                [v, v, v]
            })
            .collect();
        Frame::new(frame_index, 60.0, W, H, pixels).unwrap()
    }

    fn flat(frame_index: u64) -> Frame {
        Frame::solid(frame_index, 60.0, W, H, [120, 80, 80]).unwrap()
    }

    fn truth(frame_index: u64) -> FrameAnnotation {
        FrameAnnotation {
            video_id: "v".into(),
            frame_index,
            boxes: vec![AnnotatedBox {
                bbox: BoundingBox::new(10, 10, 30, 20).unwrap(),
                label: Label::Polyp,
            }],
        }
    }

    fn synthetic(seed: u64, latency: f64) -> SyntheticDetector {
        SyntheticDetector::new(
            SyntheticDetectorConfig {
                simulated_latency_ms: latency,
                ..SyntheticDetectorConfig::noise_free(seed)
            },
            Source::DetectorA,
        )
        .unwrap()
    }

    struct Rig {
        pipeline: Pipeline,
        a: InvocationCounter,
        b: InvocationCounter,
    }

    fn rig(mode: ExecutionMode, ensemble: EnsembleConfig, clock: ClockMode, costs: [f64; 3]) -> Rig {
        let (da, a) = Counted::new(synthetic(1, costs[1]));
        let (db, b) = Counted::new(
            SyntheticDetector::new(
                SyntheticDetectorConfig {
                    simulated_latency_ms: costs[2],
                    ..SyntheticDetectorConfig::noise_free(2)
                },
                Source::DetectorB,
            )
            .unwrap(),
        );
        let gate = HeuristicBlurGate {
            threshold: 10.0,
            simulated_latency_ms: costs[0],
        };
        let pipeline = Pipeline::new(Some(Box::new(gate)), Box::new(da), Box::new(db), ensemble, mode, clock).unwrap();
        Rig { pipeline, a, b }
    }

    #[test]
    fn blurry_frame_short_circuits() {
        let mut r = rig(
            ExecutionMode::Sequential,
            EnsembleConfig::default(),
            ClockMode::Wall,
            [0.0; 3],
        );
        let out = r.pipeline.process_frame(&flat(0), Some(&truth(0)));
        assert!(out.blurry);
        assert!(out.detections.is_empty());
        assert!(out.stage_latencies.detector_a.is_none() && out.stage_latencies.detector_b.is_none());
        assert_eq!((r.a.get(), r.b.get()), (0, 0));
    }

    #[test]
    fn noise_free_and_returns_truth() {
        for mode in [ExecutionMode::Sequential, ExecutionMode::Parallel] {
            let mut r = rig(mode, EnsembleConfig::default(), ClockMode::Wall, [0.0; 3]);
            let out = r.pipeline.process_frame(&textured(3), Some(&truth(3)));
            assert!(!out.blurry);
            assert_eq!(out.detections.len(), 1);
            assert_eq!(out.detections[0].bbox, truth(3).boxes[0].bbox);
            assert_eq!(out.detections[0].source, Source::Ensemble);
        }
    }

    #[test]
    fn accounting_sequential_vs_parallel() {
        for clock in [ClockMode::Simulated, ClockMode::Wall] {
            let mut seq = rig(
                ExecutionMode::Sequential,
                EnsembleConfig::default(),
                clock,
                [3.0, 20.0, 20.0],
            );
            let s = seq
                .pipeline
                .process_frame(&textured(0), Some(&truth(0)))
                .stage_latencies;
            assert!((s.total_wall - 43.0).abs() < 1.0, "{s:?}");
            let sum = s.gate.unwrap() + s.detector_a.unwrap() + s.detector_b.unwrap() + s.ensemble.unwrap();
            assert!(s.total_wall >= sum - 1e-6, "{s:?}");

            let mut par = rig(
                ExecutionMode::Parallel,
                EnsembleConfig::default(),
                clock,
                [3.0, 20.0, 20.0],
            );
            let p = par
                .pipeline
                .process_frame(&textured(0), Some(&truth(0)))
                .stage_latencies;
            assert!((p.total_wall - 23.0).abs() < 1.0, "{p:?}");
            let critical = p.gate.unwrap() + p.detector_a.unwrap().max(p.detector_b.unwrap()) + p.ensemble.unwrap();
            assert!((p.total_wall - critical).abs() < 1.0, "{p:?}");
        }
        let mut seq = rig(
            ExecutionMode::Sequential,
            EnsembleConfig::default(),
            ClockMode::Simulated,
            [3.0, 20.0, 20.0],
        );
        let s = seq
            .pipeline
            .process_frame(&textured(0), Some(&truth(0)))
            .stage_latencies;
        assert_eq!(s.total_wall, 43.0);
        let b = seq.pipeline.process_frame(&flat(1), Some(&truth(1))).stage_latencies;
        assert_eq!(b.total_wall, 3.0);
    }

    #[test]
    fn size_aware_charges_only_detector_a_for_small_boxes() {
        let ensemble = EnsembleConfig {
            mode: EnsembleMode::SizeAware,
            ..EnsembleConfig::default()
        };
        // 30x20 on a 64x48 frame is large, so B runs.
        let mut r = rig(
            ExecutionMode::Sequential,
            ensemble,
            ClockMode::Simulated,
            [3.0, 20.0, 20.0],
        );
        let out = r.pipeline.process_frame(&textured(0), Some(&truth(0)));
        assert_eq!(r.b.get(), 1);
        assert_eq!(out.stage_latencies.total_wall, 43.0);

        let tiny = FrameAnnotation {
            video_id: "v".into(),
            frame_index: 1,
            boxes: vec![AnnotatedBox {
                bbox: BoundingBox::new(5, 5, 3, 3).unwrap(),
                label: Label::Polyp,
            }],
        };
        let out = r.pipeline.process_frame(&textured(1), Some(&tiny));
        assert_eq!(r.b.get(), 1);
        assert_eq!(out.detections.len(), 1);
        assert!(out.stage_latencies.detector_b.is_none());
        assert_eq!(out.stage_latencies.total_wall, 23.0);
    }

    struct Flaky;

    impl DetectorBackend for Flaky {
        fn descriptor(&self) -> crate::backends::BackendDescriptor {
            crate::backends::BackendDescriptor {
                name: "flaky".into(),
                simulated_latency_ms: 0.0,
            }
        }

        fn detect(&mut self, frame: &Frame, _: Option<&FrameAnnotation>) -> Result<Vec<ScoredBox>, BackendError> {
            if frame.frame_index % 2 == 1 {
                Err(BackendError::Config("boom".into()))
            } else {
                Ok(vec![])
            }
        }
    }

    #[test]
    fn failures_do_not_stop_the_stream() {
        let mut pipeline = Pipeline::new(
            None,
            Box::new(synthetic(1, 0.0)),
            Box::new(Flaky),
            EnsembleConfig::default(),
            ExecutionMode::Parallel,
            ClockMode::Simulated,
        )
        .unwrap();
        let frames: Vec<Result<Frame, StreamError>> = (0..6)
            .map(|i| {
                if i == 4 {
                    Err(StreamError {
                        frame_index: 4,
                        source: MediaError::InvalidArgument("corrupt".into()),
                    })
                } else {
                    Ok(textured(i))
                }
            })
            .collect();
        let mut seen = Vec::new();
        let summary = pipeline.process_stream(frames, &BTreeMap::new(), |r| seen.push(r.clone()));
        assert_eq!(
            seen.iter().map(|r| r.frame_index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4, 5]
        );
        assert_eq!(summary.frames, 6);
        assert_eq!(summary.failed, 4);
        assert_eq!(summary.decode_errors, 1);
        assert!(seen[1].error.as_deref().unwrap().contains("flaky failed on frame 1"));
    }

    #[test]
    fn empty_stream() {
        let mut r = rig(
            ExecutionMode::Sequential,
            EnsembleConfig::default(),
            ClockMode::Wall,
            [0.0; 3],
        );
        let summary = r
            .pipeline
            .process_stream(Vec::new(), &BTreeMap::new(), |_| panic!("no frames"));
        assert_eq!(summary.frames, 0);
        assert_eq!(summary.latency.frames, 0);
    }

    #[test]
    fn percentiles_ordered() {
        let s = StageStats::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.p50_ms, s.p95_ms, s.max_ms, s.mean_ms), (3.0, 5.0, 5.0, 3.0));
        assert!(StageStats::from_samples(&[]).is_none());
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "gate": {"kind": "heuristic", "threshold": 50.0},
            "detector_a": {"kind": "synthetic", "seed": 7, "p_tp": 1.0},
            "detector_b": {"kind": "external", "endpoint": {"tcp": "127.0.0.1:9000"}},
            "ensemble": {"mode": "size_aware", "short_edge_ratio_threshold": 0.2},
            "execution": "parallel"
        }"#;
        let cfg: PipelineConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.execution, ExecutionMode::Parallel);
        assert_eq!(cfg.ensemble.mode, EnsembleMode::SizeAware);
        match &cfg.detector_a {
            BackendConfig::Synthetic(s) => assert_eq!((s.seed, s.p_tp), (7, 1.0)),
            other => panic!("{other:?}"),
        }
        let again: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);

        let bad: PipelineConfig = serde_json::from_str(r#"{"ensemble": {"iou_threshold": 2.0}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
