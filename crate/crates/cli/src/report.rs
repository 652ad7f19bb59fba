//! The `eval` command: frame-level counts, clip-level time to first
//! detection, and false-positive rates on polyp-free clips.

use std::collections::{BTreeMap, BTreeSet};

use scopeline::eval::{
    ecdf, fp_incidents, fp_per_minute, match_frame, prf, recall_at, time_to_first_detection, ClipRecord,
    ConfusionCounts, FrameAnnotation, MatchConfig, Prf,
};
use scopeline::geometry::ScoredBox;
use serde::{Deserialize, Serialize};

use crate::run::{load_annotations, ResultRecord};
use crate::{read_jsonl, write_atomic, write_json_atomic, CliError, EvalArgs};

pub const METRICS_FILE: &str = "metrics.json";
pub const CLIPS_FILE: &str = "clips.csv";
pub const RECALL_CURVE_FILE: &str = "recall_curve.csv";
pub const FP_CDF_FILE: &str = "fp_cdf.csv";

/// Horizons of the recall curve: 0 to 30 s in half-second steps.
pub fn recall_horizons() -> impl Iterator<Item = f64> {
    (0..=60).map(|i| f64::from(i) * 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRate {
    pub clip_id: String,
    pub fp_incidents: u64,
    pub duration_frames: u64,
    pub fp_per_minute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub frames: u64,
    pub counts: ConfusionCounts,
    pub prf: Prf,
    pub clips: Vec<ClipRecord>,
    pub recall_at_2s: Option<f64>,
    pub fp_clips: Vec<ClipRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(rename = "match")]
    pub match_config: MatchConfig,
    pub fps: f64,
    pub merge_window_frames: u64,
    pub models: BTreeMap<String, ModelMetrics>,
}

/// Per-video detections keyed by frame index. Failed and blurry frames
/// contribute an empty detection list.
pub type Detections = BTreeMap<String, BTreeMap<u64, Vec<ScoredBox>>>;

pub fn group_results(records: Vec<ResultRecord>) -> Detections {
    let mut out: Detections = BTreeMap::new();
    for r in records {
        out.entry(r.video_id)
            .or_default()
            .entry(r.result.frame_index)
            .or_default()
            .extend(r.result.detections);
    }
    out
}

pub fn evaluate(
    detections: &Detections,
    annotations: &BTreeMap<String, BTreeMap<u64, FrameAnnotation>>,
    cfg: &MatchConfig,
    fps: f64,
    merge_window: u64,
) -> Result<ModelMetrics, CliError> {
    let empty_d = BTreeMap::new();
    let empty_a = BTreeMap::new();
    let videos: BTreeSet<&String> = detections.keys().chain(annotations.keys()).collect();
    let mut counts = ConfusionCounts::default();
    let mut frames = 0;
    let mut clips = Vec::new();
    let mut fp_clips = Vec::new();
    for video in videos {
        let dets = detections.get(video).unwrap_or(&empty_d);
        let anns = annotations.get(video).unwrap_or(&empty_a);
        let frame_set: BTreeSet<u64> = dets.keys().chain(anns.keys()).copied().collect();
        let mut fp_frames = Vec::new();
        for &f in &frame_set {
            let c = match_frame(dets.get(&f).map_or(&[][..], Vec::as_slice), anns.get(&f), cfg);
            if c.fp > 0 {
                fp_frames.push(f);
            }
            counts += c;
        }
        frames += frame_set.len() as u64;

        let has_polyp = anns
            .values()
            .any(|a| a.boxes.iter().any(|b| cfg.classes.contains(&b.label)));
        if has_polyp {
            clips
                .push(time_to_first_detection(video, anns, dets, fps, cfg).map_err(|e| CliError::Data(e.to_string()))?);
        } else if let Some(&last) = frame_set.last() {
            let incidents = fp_incidents(&fp_frames, merge_window).expect("frames come from a sorted set");
            let rate = fp_per_minute(incidents, last + 1, fps).map_err(|e| CliError::Config(e.to_string()))?;
            fp_clips.push(ClipRate {
                clip_id: video.clone(),
                fp_incidents: incidents,
                duration_frames: last + 1,
                fp_per_minute: rate,
            });
        }
    }
    Ok(ModelMetrics {
        frames,
        counts,
        prf: prf(counts),
        recall_at_2s: recall_at(&clips, 2.0),
        clips,
        fp_clips,
    })
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsFile, CliError> {
    let cfg = MatchConfig {
        criterion: args.criterion.into(),
        iou_match_threshold: args.iou_match_threshold,
        ..MatchConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if !(args.fps > 0.0 && args.fps.is_finite()) {
        return Err(CliError::Config(format!("--fps must be positive, got {}", args.fps)));
    }
    let detections = group_results(read_jsonl::<ResultRecord>(&args.results)?);
    let annotations = load_annotations(&args.annotations)?;
    let metrics = evaluate(&detections, &annotations, &cfg, args.fps, args.merge_window)?;

    std::fs::create_dir_all(&args.output).map_err(CliError::io(&args.output))?;
    write_atomic(
        &args.output.join(CLIPS_FILE),
        &csv_bytes(
            &["clip_id", "delay_seconds"],
            metrics
                .clips
                .iter()
                .map(|c| vec![c.clip_id.clone(), opt(c.delay_seconds())]),
        ),
    )?;
    write_atomic(
        &args.output.join(RECALL_CURVE_FILE),
        &csv_bytes(
            &["t", "recall"],
            recall_horizons().map(|t| vec![t.to_string(), opt(recall_at(&metrics.clips, t))]),
        ),
    )?;
    let rates: Vec<f64> = metrics.fp_clips.iter().map(|c| c.fp_per_minute).collect();
    write_atomic(
        &args.output.join(FP_CDF_FILE),
        &csv_bytes(
            &["rate", "fraction"],
            ecdf(&rates)
                .unwrap_or_default()
                .into_iter()
                .map(|(r, p)| vec![r.to_string(), p.to_string()]),
        ),
    )?;

    let file = MetricsFile {
        match_config: cfg,
        fps: args.fps,
        merge_window_frames: args.merge_window,
        models: BTreeMap::from([(args.model.clone(), metrics)]),
    };
    write_json_atomic(&args.output.join(METRICS_FILE), &file)?;
    Ok(file)
}
