//! The `bench` command. Frames are generated in memory so the numbers
//! reflect the pipeline and its cost profile, not disk I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use scopeline::eval::{AnnotatedBox, FrameAnnotation};
use scopeline::geometry::{BoundingBox, Label};
use scopeline::media::{Frame, DEFAULT_FPS};
use scopeline::pipeline::{BackendConfig, ClockMode, ExecutionMode, GateConfig, Pipeline, PipelineConfig, StageStats};
use serde::{Deserialize, Serialize};

use crate::generate::{render_blurry, render_clear};
use crate::run::load_config;
use crate::{write_json_atomic, BenchArgs, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub execution: ExecutionMode,
    pub frames: u64,
    pub blurry: u64,
    pub failed: u64,
    /// Mean accounted milliseconds per frame.
    pub ms_per_frame: f64,
    pub throughput_fps: f64,
    pub stages: BTreeMap<String, StageStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: PipelineConfig,
    pub scenarios: Vec<Scenario>,
}

impl BenchReport {
    pub fn scenario(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}",
            "scenario", "frames", "gate", "det_a", "det_b", "ensemble", "total", "fps"
        );
        for s in &self.scenarios {
            let mean = |k: &str| s.stages.get(k).map_or("-".to_owned(), |v| format!("{:.2}", v.mean_ms));
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10.2} {:>9.2}",
                s.name,
                s.frames,
                mean("gate"),
                mean("detector_a"),
                mean("detector_b"),
                mean("ensemble"),
                s.ms_per_frame,
                s.throughput_fps
            );
        }
        out
    }
}

/// Applies the cost profile: simulated latencies on the heuristic gate and
/// on synthetic detectors, wall clock on.
pub fn bench_config(base: PipelineConfig, args: &BenchArgs) -> PipelineConfig {
    let mut cfg = base;
    cfg.clock = ClockMode::Wall;
    if let GateConfig::Heuristic {
        simulated_latency_ms, ..
    } = &mut cfg.gate
    {
        *simulated_latency_ms = args.gate_ms;
    }
    for (slot, ms) in [
        (&mut cfg.detector_a, args.detector_a_ms),
        (&mut cfg.detector_b, args.detector_b_ms),
    ] {
        if let BackendConfig::Synthetic(s) = slot {
            s.simulated_latency_ms = ms;
        }
    }
    cfg
}

fn run_scenario(
    name: &str,
    cfg: &PipelineConfig,
    execution: ExecutionMode,
    frames: &[Frame],
    truth: &BTreeMap<u64, FrameAnnotation>,
) -> Result<Scenario, CliError> {
    let mut cfg = cfg.clone();
    cfg.execution = execution;
    let mut pipeline = Pipeline::from_config(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let summary = pipeline.process_stream(frames.iter().cloned().map(Ok), truth, |_| {});
    let ms_per_frame = summary.latency.stages.get("total_wall").map_or(0.0, |s| s.mean_ms);
    Ok(Scenario {
        name: name.to_owned(),
        execution,
        frames: summary.frames,
        blurry: summary.blurry,
        failed: summary.failed,
        ms_per_frame,
        throughput_fps: summary.latency.throughput_fps,
        stages: summary.latency.stages,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    if args.frames == 0 {
        return Err(CliError::Config("--frames must be positive".into()));
    }
    if args.width < 3 || args.height < 3 {
        return Err(CliError::Config("bench frames must be at least 3x3".into()));
    }
    let base = match &args.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    let cfg = bench_config(base, args);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let (w, h) = (args.width, args.height);
    let polyp = BoundingBox::new(w / 4, h / 4, w / 2, h / 2).expect("frame is at least 3x3");
    let truth: BTreeMap<u64, FrameAnnotation> = (0..args.frames)
        .map(|f| {
            (
                f,
                FrameAnnotation {
                    video_id: "bench".into(),
                    frame_index: f,
                    boxes: vec![AnnotatedBox {
                        bbox: polyp,
                        label: Label::Polyp,
                    }],
                },
            )
        })
        .collect();
    let clear: Vec<Frame> = (0..args.frames)
        .map(|f| {
            Frame::new(
                f,
                DEFAULT_FPS,
                w,
                h,
                render_clear(7, f, w, h, &[(polyp, [230, 40, 40])]),
            )
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let blurry: Vec<Frame> = (0..args.frames)
        .map(|f| Frame::new(f, DEFAULT_FPS, w, h, render_blurry(w, h)))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let scenarios = vec![
        run_scenario("sequential-clear", &cfg, ExecutionMode::Sequential, &clear, &truth)?,
        run_scenario("parallel-clear", &cfg, ExecutionMode::Parallel, &clear, &truth)?,
        run_scenario("sequential-blurry", &cfg, ExecutionMode::Sequential, &blurry, &truth)?,
    ];
    let report = BenchReport { config: cfg, scenarios };
    if let Some(path) = &args.output {
        write_json_atomic(path, &report)?;
    }
    Ok(report)
}
