use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use scopeline::eval::FrameAnnotation;
use scopeline::media::{FrameStream, MANIFEST_FILE};
use scopeline::pipeline::{
    BackendConfig, LatencyRecorder, LatencyReport, Pipeline, PipelineConfig, PipelineResult, RunSummary,
};
use serde::{Deserialize, Serialize};

use crate::generate::{ANNOTATIONS_FILE, VIDEOS_DIR};
use crate::{read_jsonl, tmp_path, write_json_atomic, write_jsonl, CliError, RunArgs, TOOL_VERSION};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const RUN_MANIFEST_FILE: &str = "manifest.json";
pub const LATENCY_FILE: &str = "latency.json";

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub video_id: String,
    #[serde(flatten)]
    pub result: PipelineResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub dir: PathBuf,
    pub frame_count: u64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Seeds actually used by synthetic detectors for this video.
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub input: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps_override: Option<f64>,
    pub output: PathBuf,
    pub videos: Vec<VideoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyFile {
    pub overall: LatencyReport,
    pub videos: BTreeMap<String, RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutcome {
    pub videos: usize,
    pub frames: u64,
    pub blurry: u64,
    pub failed: u64,
    pub decode_errors: u64,
}

/// Reads a pipeline config, or the config recorded in a run manifest.
pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
    let value = match value {
        serde_json::Value::Object(mut map) if map.contains_key("tool_version") && map.contains_key("config") => {
            map.remove("config").expect("checked")
        }
        other => other,
    };
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

/// Applies command-line overrides on top of the file configuration.
pub fn resolve_config(args: &RunArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.execution = m.into();
    }
    if let Some(m) = args.ensemble {
        cfg.ensemble.mode = m.into();
    }
    if let Some(t) = args.short_edge_threshold {
        cfg.ensemble.short_edge_ratio_threshold = t;
    }
    if let Some(t) = args.iou_threshold {
        cfg.ensemble.iou_threshold = t;
    }
    if let Some(c) = args.clock {
        cfg.clock = c.into();
    }
    if let Some(seed) = args.seed {
        if let BackendConfig::Synthetic(s) = &mut cfg.detector_a {
            s.seed = seed;
        }
        if let BackendConfig::Synthetic(s) = &mut cfg.detector_b {
            s.seed = seed.wrapping_add(1);
        }
    }
    if let Some(fps) = args.fps {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(CliError::Config(format!("--fps must be positive, got {fps}")));
        }
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Frame directories under `input`, sorted by name.
pub fn discover_videos(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !input.is_dir() {
        return Err(CliError::Data(format!("input {} is not a directory", input.display())));
    }
    if input.join(MANIFEST_FILE).is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let root = if input.join(VIDEOS_DIR).is_dir() {
        input.join(VIDEOS_DIR)
    } else {
        input.to_path_buf()
    };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(&root).map_err(CliError::io(&root))? {
        let path = entry.map_err(CliError::io(&root))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Data(format!(
            "no frame directories with {MANIFEST_FILE} under {}",
            input.display()
        )));
    }
    Ok(dirs)
}

fn default_annotations(input: &Path) -> Option<PathBuf> {
    let mut candidates = vec![input.join(ANNOTATIONS_FILE)];
    if let Some(parent) = input.parent() {
        if parent.file_name().is_some_and(|n| n == VIDEOS_DIR) {
            candidates.extend(parent.parent().map(|root| root.join(ANNOTATIONS_FILE)));
        }
    }
    candidates.into_iter().find(|p| p.is_file())
}

pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, BTreeMap<u64, FrameAnnotation>>, CliError> {
    let mut out: BTreeMap<String, BTreeMap<u64, FrameAnnotation>> = BTreeMap::new();
    for a in read_jsonl::<FrameAnnotation>(path)? {
        let frames = out.entry(a.video_id.clone()).or_default();
        if let Some(prev) = frames.get_mut(&a.frame_index) {
            prev.boxes.extend(a.boxes);
        } else {
            frames.insert(a.frame_index, a);
        }
    }
    Ok(out)
}

/// FNV-1a, used to give each video its own synthetic noise stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-video copy of the config with synthetic seeds mixed with the video id.
pub fn video_config(base: &PipelineConfig, video_id: &str) -> (PipelineConfig, BTreeMap<String, u64>) {
    let mut cfg = base.clone();
    let mut seeds = BTreeMap::new();
    for (name, slot) in [("detector_a", &mut cfg.detector_a), ("detector_b", &mut cfg.detector_b)] {
        if let BackendConfig::Synthetic(s) = slot {
            s.seed ^= fnv1a(video_id);
            seeds.insert(name.to_owned(), s.seed);
        }
    }
    (cfg, seeds)
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome, CliError> {
    let cfg = resolve_config(args)?;
    let videos = discover_videos(&args.input)?;
    let ann_path = args.annotations.clone().or_else(|| default_annotations(&args.input));
    let annotations = match &ann_path {
        Some(p) => load_annotations(p)?,
        None => {
            warn!("no annotations found; synthetic detectors will only emit false positives");
            BTreeMap::new()
        }
    };

    fs::create_dir_all(&args.output).map_err(CliError::io(&args.output))?;
    let results_path = args.output.join(RESULTS_FILE);
    let results_tmp = tmp_path(&results_path);
    let mut results = BufWriter::new(fs::File::create(&results_tmp).map_err(CliError::io(&results_tmp))?);

    let empty = BTreeMap::new();
    let mut outcome = RunOutcome::default();
    let mut overall = LatencyRecorder::default();
    let mut summaries = BTreeMap::new();
    let mut entries = Vec::new();
    for dir in videos {
        let mut stream = FrameStream::open(&dir).map_err(|e| CliError::Data(e.to_string()))?;
        if let Some(fps) = args.fps {
            stream = stream.with_fps(fps).map_err(|e| CliError::Config(e.to_string()))?;
        }
        let manifest = stream.manifest().clone();
        let (video_cfg, seeds) = video_config(&cfg, &manifest.video_id);
        let mut pipeline = Pipeline::from_config(&video_cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let truth = annotations.get(&manifest.video_id).unwrap_or(&empty);
        let mut write_err = None;
        let summary = pipeline.process_stream(stream.by_ref(), truth, |r| {
            if let Some(e) = &r.error {
                warn!("{} frame {}: {e}", manifest.video_id, r.frame_index);
            } else {
                overall.record(&r.stage_latencies);
            }
            let record = ResultRecord {
                video_id: manifest.video_id.clone(),
                result: r.clone(),
            };
            if write_err.is_none() {
                write_err = write_jsonl(&mut results, &record).err();
            }
        });
        if let Some(e) = write_err {
            return Err(CliError::io(&results_tmp)(e));
        }
        info!(
            "{}: {} frames, {} blurry, {} failed",
            manifest.video_id, summary.frames, summary.blurry, summary.failed
        );
        outcome.videos += 1;
        outcome.frames += summary.frames;
        outcome.blurry += summary.blurry;
        outcome.failed += summary.failed;
        outcome.decode_errors += summary.decode_errors;
        entries.push(VideoEntry {
            video_id: manifest.video_id.clone(),
            dir: dir.clone(),
            frame_count: manifest.frame_count,
            width: manifest.width,
            height: manifest.height,
            fps: stream.fps(),
            seeds,
        });
        summaries.insert(manifest.video_id, summary);
    }
    results.flush().map_err(CliError::io(&results_tmp))?;
    drop(results);
    fs::rename(&results_tmp, &results_path).map_err(CliError::io(&results_path))?;

    write_json_atomic(
        &args.output.join(RUN_MANIFEST_FILE),
        &RunManifest {
            tool_version: TOOL_VERSION.to_owned(),
            config: cfg,
            input: args.input.clone(),
            annotations: ann_path,
            fps_override: args.fps,
            output: args.output.clone(),
            videos: entries,
        },
    )?;
    write_json_atomic(
        &args.output.join(LATENCY_FILE),
        &LatencyFile {
            overall: overall.report(),
            videos: summaries,
        },
    )?;

    if outcome.decode_errors > 0 {
        return Err(CliError::Data(format!(
            "{} frame(s) could not be read; see {}",
            outcome.decode_errors,
            results_path.display()
        )));
    }
    Ok(outcome)
}
