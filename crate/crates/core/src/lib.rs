//! Blur-gated, dual-detector video pipeline with IoU "AND" ensembling, plus
//! the evaluation suite used to score it.
//!
//! * [`geometry`]: boxes, IoU, NMS, mask-to-box extraction
//! * [`media`]: PPM frames, frame directories, Laplacian blur gate
//! * [`backends`]: synthetic and external detector / blur backends
//! * [`ensemble`]: AND and size-aware ensemble rules
//! * [`pipeline`]: per-frame orchestration and latency accounting
//! * [`eval`]: matching, P/R/F-scores, time-to-detection, FP incidents

pub mod backends;
pub mod ensemble;
pub mod eval;
pub mod geometry;
pub mod media;
pub mod pipeline;

pub use geometry::{BoundingBox, Label, ScoredBox, Source};
pub use media::Frame;
