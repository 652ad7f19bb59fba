//! Synthetic dataset writer.
//!
//! Layout:
//!
//! ```text
//! <output>/dataset.json
//! <output>/annotations.jsonl
//! <output>/videos/<video_id>/manifest.json
//! <output>/videos/<video_id>/000000.ppm ...
//! ```
//!
//! Clear frames are uniform noise with solid rectangles as pseudo-polyps;
//! blurry frames are a single flat colour and carry no annotations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use scopeline::backends::rng::SplitMix64;
use scopeline::eval::{AnnotatedBox, FrameAnnotation};
use scopeline::geometry::{BoundingBox, Label};
use scopeline::media::{encode_ppm, frame_file_name, VideoManifest, MANIFEST_FILE};
use serde::{Deserialize, Serialize};

use crate::{tmp_path, write_json_atomic, write_jsonl, CliError, GenArgs, TOOL_VERSION};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const VIDEOS_DIR: &str = "videos";
pub const DATASET_FILE: &str = "dataset.json";

const BLURRY_RGB: [u8; 3] = [118, 64, 52];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub tool_version: String,
    pub seed: u64,
    pub videos: u32,
    pub frames: u64,
    pub polyps: u32,
    pub blur_fraction: f64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

/// Everything needed to render one video.
#[derive(Debug, Clone)]
pub struct VideoPlan {
    pub video_id: String,
    pub polyps: Vec<(BoundingBox, [u8; 3])>,
    pub blurry: Vec<bool>,
    texture_seed: u64,
}

pub fn video_id(ordinal: u32) -> String {
    format!("video_{ordinal:03}")
}

/// Exactly `round(fraction * frames)` frames are marked blurry, chosen by a
/// seeded Fisher-Yates shuffle.
pub fn blurry_mask(rng: &mut SplitMix64, frames: u64, fraction: f64) -> Vec<bool> {
    let n = frames as usize;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let blurry = ((fraction * frames as f64).round() as usize).min(n);
    let mut mask = vec![false; n];
    for &i in &order[..blurry] {
        mask[i] = true;
    }
    mask
}

pub fn plan_video(args: &GenArgs, ordinal: u32) -> VideoPlan {
    let mut rng = SplitMix64::for_frame(args.seed, u64::from(ordinal));
    let short = args.width.min(args.height);
    let (lo, hi) = ((short / 8).max(1), (short / 3).max(1));
    let polyps = (0..args.polyps)
        .map(|_| {
            let w = (lo + rng.below(u64::from(hi - lo + 1)) as u32).min(args.width);
            let h = (lo + rng.below(u64::from(hi - lo + 1)) as u32).min(args.height);
            let x = rng.below(u64::from(args.width - w + 1)) as u32;
            let y = rng.below(u64::from(args.height - h + 1)) as u32;
            let colour = [
                200 + rng.below(56) as u8,
                20 + rng.below(40) as u8,
                20 + rng.below(40) as u8,
            ];
            (BoundingBox::new(x, y, w, h).expect("non-empty polyp"), colour)
        })
        .collect();
    let blurry = blurry_mask(&mut rng, args.frames, args.blur_fraction);
    VideoPlan {
        video_id: video_id(ordinal),
        polyps,
        blurry,
        texture_seed: rng.next_u64(),
    }
}

/// Noise texture with the given rectangles painted on top.
pub fn render_clear(seed: u64, frame_index: u64, width: u32, height: u32, rects: &[(BoundingBox, [u8; 3])]) -> Vec<u8> {
    let mut rng = SplitMix64::for_frame(seed, frame_index);
    let mut pixels = Vec::with_capacity(3 * width as usize * height as usize);
    for _ in 0..width as usize * height as usize {
        let v = rng.next_u64();
        pixels.extend_from_slice(&[
            64 + (v & 0x7f) as u8,
            64 + ((v >> 8) & 0x7f) as u8,
            64 + ((v >> 16) & 0x7f) as u8,
        ]);
    }
    for (b, rgb) in rects {
        for y in b.y()..b.bottom() {
            for x in b.x()..b.right() {
                let i = 3 * (y as usize * width as usize + x as usize);
                pixels[i..i + 3].copy_from_slice(rgb);
            }
        }
    }
    pixels
}

pub fn render_blurry(width: u32, height: u32) -> Vec<u8> {
    BLURRY_RGB
        .iter()
        .copied()
        .cycle()
        .take(3 * width as usize * height as usize)
        .collect()
}

impl VideoPlan {
    pub fn render(&self, frame_index: u64, width: u32, height: u32) -> Vec<u8> {
        if self.blurry[frame_index as usize] {
            render_blurry(width, height)
        } else {
            render_clear(self.texture_seed, frame_index, width, height, &self.polyps)
        }
    }

    pub fn annotation(&self, frame_index: u64) -> Option<FrameAnnotation> {
        if self.polyps.is_empty() || self.blurry[frame_index as usize] {
            return None;
        }
        Some(FrameAnnotation {
            video_id: self.video_id.clone(),
            frame_index,
            boxes: self
                .polyps
                .iter()
                .map(|(b, _)| AnnotatedBox {
                    bbox: *b,
                    label: Label::Polyp,
                })
                .collect(),
        })
    }
}

fn validate(args: &GenArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.blur_fraction) {
        return Err(CliError::Config(format!(
            "--blur-fraction {} outside [0, 1]",
            args.blur_fraction
        )));
    }
    if args.width < 3 || args.height < 3 {
        return Err(CliError::Config(format!(
            "frames must be at least 3x3, got {}x{}",
            args.width, args.height
        )));
    }
    if !(args.fps > 0.0 && args.fps.is_finite()) {
        return Err(CliError::Config(format!("--fps must be positive, got {}", args.fps)));
    }
    Ok(())
}

/// Writes the dataset and returns its descriptor.
pub fn gen_synthetic(args: &GenArgs) -> Result<DatasetDescriptor, CliError> {
    validate(args)?;
    let root = &args.output;
    let videos_dir = root.join(VIDEOS_DIR);
    fs::create_dir_all(&videos_dir).map_err(CliError::io(&videos_dir))?;

    let ann_path = root.join(ANNOTATIONS_FILE);
    let ann_tmp = tmp_path(&ann_path);
    let mut ann = BufWriter::new(fs::File::create(&ann_tmp).map_err(CliError::io(&ann_tmp))?);

    for ordinal in 0..args.videos {
        let plan = plan_video(args, ordinal);
        let dir = videos_dir.join(&plan.video_id);
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        for f in 0..args.frames {
            let path = dir.join(frame_file_name(f));
            let bytes = encode_ppm(args.width, args.height, &plan.render(f, args.width, args.height));
            fs::write(&path, bytes).map_err(CliError::io(&path))?;
            if let Some(a) = plan.annotation(f) {
                write_jsonl(&mut ann, &a).map_err(CliError::io(&ann_tmp))?;
            }
        }
        write_json_atomic(
            &dir.join(MANIFEST_FILE),
            &VideoManifest {
                video_id: plan.video_id.clone(),
                fps: args.fps,
                width: args.width,
                height: args.height,
                frame_count: args.frames,
            },
        )?;
        info!(
            "wrote {} ({} frames, {} blurry)",
            plan.video_id,
            args.frames,
            plan.blurry.iter().filter(|&&b| b).count()
        );
    }
    ann.flush().map_err(CliError::io(&ann_tmp))?;
    drop(ann);
    fs::rename(&ann_tmp, &ann_path).map_err(CliError::io(&ann_path))?;

    let descriptor = DatasetDescriptor {
        tool_version: TOOL_VERSION.to_owned(),
        seed: args.seed,
        videos: args.videos,
        frames: args.frames,
        polyps: args.polyps,
        blur_fraction: args.blur_fraction,
        width: args.width,
        height: args.height,
        fps: args.fps,
    };
    write_json_atomic(&root.join(DATASET_FILE), &descriptor)?;
    Ok(descriptor)
}

/// Convenience for writing a single annotation file from memory.
pub fn write_annotations(path: &Path, annotations: &[FrameAnnotation]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for a in annotations {
        write_jsonl(&mut buf, a).map_err(CliError::io(path))?;
    }
    crate::write_atomic(path, &buf)
}
