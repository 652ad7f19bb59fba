use std::path::PathBuf;

use clap::{Args, ValueEnum};
use scopeline::ensemble::EnsembleMode;
use scopeline::eval::MatchCriterion;
use scopeline::pipeline::{ClockMode, ExecutionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sequential,
    Parallel,
}

impl From<ModeArg> for ExecutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sequential => ExecutionMode::Sequential,
            ModeArg::Parallel => ExecutionMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleArg {
    And,
    #[value(name = "size_aware", alias = "size-aware")]
    SizeAware,
}

impl From<EnsembleArg> for EnsembleMode {
    fn from(m: EnsembleArg) -> Self {
        match m {
            EnsembleArg::And => EnsembleMode::And,
            EnsembleArg::SizeAware => EnsembleMode::SizeAware,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchArg {
    Iou,
    Centroid,
}

impl From<MatchArg> for MatchCriterion {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Iou => MatchCriterion::Iou,
            MatchArg::Centroid => MatchCriterion::Centroid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Wall,
    Simulated,
}

impl From<ClockArg> for ClockMode {
    fn from(c: ClockArg) -> Self {
        match c {
            ClockArg::Wall => ClockMode::Wall,
            ClockArg::Simulated => ClockMode::Simulated,
        }
    }
}

/// Run the pipeline over a video directory or a dataset root.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Pipeline configuration (JSON). A previous run's manifest.json is accepted too.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A frame directory with manifest.json, or a dataset root containing videos/.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Annotations (JSON Lines) fed to synthetic detectors. Defaults to the
    /// dataset's annotations.jsonl when present.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub ensemble: Option<EnsembleArg>,
    #[arg(long)]
    pub short_edge_threshold: Option<f64>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Base seed for synthetic detectors (detector B uses seed + 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the frame rate recorded in each video manifest.
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long, value_enum)]
    pub clock: Option<ClockArg>,
}

/// Score a results file against annotations.
#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long = "match", value_enum, default_value = "iou")]
    pub criterion: MatchArg,
    #[arg(long, default_value_t = scopeline::eval::DEFAULT_IOU_MATCH_THRESHOLD)]
    pub iou_match_threshold: f64,
    #[arg(long, default_value_t = scopeline::media::DEFAULT_FPS)]
    pub fps: f64,
    #[arg(long, default_value_t = scopeline::eval::DEFAULT_MERGE_WINDOW_FRAMES)]
    pub merge_window: u64,
    /// Name the results are reported under in metrics.json.
    #[arg(long, default_value = "system")]
    pub model: String,
}

/// Measure per-stage latency under a simulated cost profile.
#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub frames: u64,
    #[arg(long, default_value_t = 3.0)]
    pub gate_ms: f64,
    #[arg(long, default_value_t = 20.0)]
    pub detector_a_ms: f64,
    #[arg(long, default_value_t = 20.0)]
    pub detector_b_ms: f64,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 48)]
    pub height: u32,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Write a synthetic dataset with known ground truth.
#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub videos: u32,
    #[arg(long, default_value_t = 100)]
    pub frames: u64,
    /// Pseudo-polyps per video, present on every clear frame.
    #[arg(long, default_value_t = 1)]
    pub polyps: u32,
    #[arg(long, default_value_t = 0.3)]
    pub blur_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 384)]
    pub width: u32,
    #[arg(long, default_value_t = 288)]
    pub height: u32,
    #[arg(long, default_value_t = scopeline::media::DEFAULT_FPS)]
    pub fps: f64,
}

/// Serve a synthetic detector and the heuristic blur gate over the framed protocol.
#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Listen on host:port instead of stdin/stdout.
    #[arg(long)]
    pub listen: Option<String>,
    /// Synthetic detector configuration (JSON); flags below override it.
    #[arg(long)]
    pub detector_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Return the ground truth boxes exactly, with no false positives.
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Which video of the annotations file the frames belong to.
    #[arg(long)]
    pub video_id: Option<String>,
    #[arg(long, default_value_t = scopeline::media::DEFAULT_FPS)]
    pub fps: f64,
    #[arg(long, default_value_t = scopeline::media::DEFAULT_BLUR_THRESHOLD)]
    pub blur_threshold: f64,
}
