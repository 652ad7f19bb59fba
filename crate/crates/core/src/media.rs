//! Frame ingestion (binary PPM, numbered frame directories) and the
//! variance-of-Laplacian blur gate.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FPS: f64 = 60.0;
pub const DEFAULT_BLUR_THRESHOLD: f64 = 100.0;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("PPM format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

/// A decoded RGB8 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_index: u64,
    pub timestamp_ms: f64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(frame_index: u64, fps: f64, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, MediaError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(MediaError::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        let expected = 3 * width as usize * height as usize;
        if pixels.len() != expected {
            return Err(MediaError::InvalidArgument(format!(
                "pixel buffer has {} bytes, expected {expected} for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            frame_index,
            timestamp_ms: frame_index as f64 * (1000.0 / fps),
            width,
            height,
            pixels,
        })
    }

    /// A frame filled with a single colour.
    pub fn solid(frame_index: u64, fps: f64, width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, MediaError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(3 * width as usize * height as usize)
            .collect();
        Self::new(frame_index, fps, width, height, pixels)
    }
}

/// Decoded raster: `(width, height, row-major RGB8)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    token_start: usize,
}

impl HeaderCursor<'_> {
    fn err(&self, reason: impl Into<String>) -> MediaError {
        MediaError::Format {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, MediaError> {
        let start_sep = self.pos;
        self.skip_separators();
        if self.pos == start_sep {
            return Err(self.err(format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        self.token_start = start;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => self.err(format!("truncated header, expected {what}")),
                Some(_) => self.err(format!("expected decimal {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| MediaError::Format {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

/// Decodes a binary (`P6`) PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Raster, MediaError> {
    let mut cur = HeaderCursor {
        bytes,
        pos: 0,
        token_start: 0,
    };
    if bytes.len() < 2 {
        return Err(cur.err("truncated magic number"));
    }
    if &bytes[..2] != b"P6" {
        return Err(cur.err("bad magic number, expected P6"));
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(MediaError::Format {
            offset: cur.token_start,
            reason: format!("unsupported maxval {maxval}, only 255 is supported"),
        });
    }
    if width == 0 || height == 0 {
        return Err(cur.err(format!("zero image dimension {width}x{height}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(cur.err("expected single whitespace after maxval")),
        None => return Err(cur.err("truncated header after maxval")),
    }
    let len = 3 * width as usize * height as usize;
    let payload = &bytes[cur.pos..];
    if payload.len() < len {
        return Err(MediaError::Format {
            offset: bytes.len(),
            reason: format!("truncated payload: {} of {len} bytes", payload.len()),
        });
    }
    Ok(Raster {
        width,
        height,
        pixels: payload[..len].to_vec(),
    })
}

/// Canonical `P6` encoding: `"P6\n{w} {h}\n255\n"` followed by the raster.
pub fn encode_ppm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Row-major grayscale grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, MediaError> {
        if data.len() != width as usize * height as usize {
            return Err(MediaError::InvalidArgument(format!(
                "gray buffer has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width as usize + x]
    }
}

/// BT.601 luma.
pub fn luma(frame: &Frame) -> GrayImage {
    let data = frame
        .pixels
        .chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect();
    GrayImage {
        width: frame.width,
        height: frame.height,
        data,
    }
}

/// Population variance of the 4-neighbour Laplacian over interior pixels.
pub fn laplacian_variance(gray: &GrayImage) -> Result<f64, MediaError> {
    let (w, h) = (gray.width as usize, gray.height as usize);
    if w < 3 || h < 3 {
        return Err(MediaError::InvalidArgument(format!(
            "Laplacian needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let d = &gray.data;
    let n = ((w - 2) * (h - 2)) as f64;
    // Welford keeps the variance stable on large frames.
    let (mut count, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for y in 1..h - 1 {
        let row = y * w;
        for x in 1..w - 1 {
            let i = row + x;
            let r = d[i - w] + d[i + w] + d[i - 1] + d[i + 1] - 4.0 * d[i];
            count += 1.0;
            let delta = r - mean;
            mean += delta / count;
            m2 += delta * (r - mean);
        }
    }
    debug_assert_eq!(count, n);
    Ok((m2 / n).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurVerdict {
    Blurry,
    Clear,
}

impl BlurVerdict {
    pub fn is_blurry(self) -> bool {
        self == BlurVerdict::Blurry
    }
}

/// Blurry iff the Laplacian variance of the luma is below `threshold`.
pub fn heuristic_blur_gate(frame: &Frame, threshold: f64) -> Result<BlurVerdict, MediaError> {
    let score = laplacian_variance(&luma(frame))?;
    Ok(if score < threshold {
        BlurVerdict::Blurry
    } else {
        BlurVerdict::Clear
    })
}

/// `manifest.json` of a frame directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: u64,
}

pub fn frame_file_name(frame_index: u64) -> String {
    format!("{frame_index:06}.ppm")
}

/// A frame that could not be read, with the index it was expected at.
#[derive(Debug, Error)]
#[error("frame {frame_index}: {source}")]
pub struct StreamError {
    pub frame_index: u64,
    #[source]
    pub source: MediaError,
}

/// Sequential reader over a directory of `NNNNNN.ppm` files plus
/// `manifest.json`. Yields frames in strictly increasing index order.
#[derive(Debug)]
pub struct FrameStream {
    dir: PathBuf,
    manifest: VideoManifest,
    fps: f64,
    next: u64,
}

impl FrameStream {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, MediaError> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = read_manifest(&dir)?;
        let fps = manifest.fps;
        Ok(Self {
            dir,
            manifest,
            fps,
            next: 0,
        })
    }

    /// Overrides the manifest's frame rate.
    pub fn with_fps(mut self, fps: f64) -> Result<Self, MediaError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(MediaError::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        self.fps = fps;
        Ok(self)
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn load(&self, frame_index: u64) -> Result<Frame, MediaError> {
        let path = self.dir.join(frame_file_name(frame_index));
        let bytes = fs::read(&path).map_err(|source| MediaError::Io {
            path: path.clone(),
            source,
        })?;
        let raster = decode_ppm(&bytes)?;
        if raster.width != self.manifest.width || raster.height != self.manifest.height {
            return Err(MediaError::InvalidArgument(format!(
                "{}: {}x{} does not match manifest extent {}x{}",
                path.display(),
                raster.width,
                raster.height,
                self.manifest.width,
                self.manifest.height
            )));
        }
        Frame::new(frame_index, self.fps, raster.width, raster.height, raster.pixels)
    }
}

impl Iterator for FrameStream {
    type Item = Result<Frame, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.frame_count {
            return None;
        }
        let frame_index = self.next;
        self.next += 1;
        Some(
            self.load(frame_index)
                .map_err(|source| StreamError { frame_index, source }),
        )
    }
}

pub fn read_manifest(dir: &Path) -> Result<VideoManifest, MediaError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| MediaError::Io {
        path: path.clone(),
        source,
    })?;
    let manifest: VideoManifest = serde_json::from_str(&text).map_err(|e| MediaError::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if !(manifest.fps > 0.0 && manifest.fps.is_finite()) || manifest.width == 0 || manifest.height == 0 {
        return Err(MediaError::Manifest {
            path,
            reason: "fps, width and height must be positive".into(),
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checkerboard(w: u32, h: u32) -> GrayImage {
        let data = (0..h)
            .flat_map(|y| (0..w).map(move |x| if (x + y) % 2 == 0 { 0.0 } else { 255.0 }))
            .collect();
        GrayImage::new(w, h, data).unwrap()
    }

    /// Two-pass reference: explicit kernel loop, then mean and variance.
    fn laplacian_variance_oracle(g: &GrayImage) -> f64 {
        let kernel = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
        let mut responses = Vec::new();
        for y in 1..g.height as usize - 1 {
            for x in 1..g.width as usize - 1 {
                let mut acc = 0.0;
                for (ky, krow) in kernel.iter().enumerate() {
                    for (kx, k) in krow.iter().enumerate() {
                        acc += k * g.at(x + kx - 1, y + ky - 1);
                    }
                }
                responses.push(acc);
            }
        }
        let n = responses.len() as f64;
        let mean = responses.iter().sum::<f64>() / n;
        responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
    }

    fn smooth3(g: &GrayImage) -> GrayImage {
        let k = [1.0, 2.0, 1.0];
        let (w, h) = (g.width as usize, g.height as usize);
        let mut out = g.data.clone();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += k[dy] * k[dx] * g.at(x + dx - 1, y + dy - 1);
                    }
                }
                out[y * w + x] = acc / 16.0;
            }
        }
        GrayImage::new(g.width, g.height, out).unwrap()
    }

    #[test]
    fn decode_single_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        let r = decode_ppm(&bytes).unwrap();
        assert_eq!((r.width, r.height, r.pixels), (1, 1, vec![255, 0, 0]));
    }

    #[test]
    fn decode_rejects_16_bit() {
        let err = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, MediaError::Format { offset: 7, .. }), "{err}");
        assert!(err.to_string().contains("maxval"));
    }

    #[test]
    fn comments_are_whitespace() {
        let plain = b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06".to_vec();
        let commented = b"P6\n# c\n2 # c\n1\n# c\n255\n\x01\x02\x03\x04\x05\x06".to_vec();
        assert_eq!(decode_ppm(&plain).unwrap(), decode_ppm(&commented).unwrap());
    }

    #[test]
    fn malformed_inputs_name_offsets() {
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\n\0"),
            Err(MediaError::Format { offset: 0, .. })
        ));
        assert!(matches!(decode_ppm(b"P6\n1"), Err(MediaError::Format { .. })));
        assert!(matches!(
            decode_ppm(b"P6\nx 1 255\n"),
            Err(MediaError::Format { offset: 3, .. })
        ));
        let err = decode_ppm(b"P6\n2 2\n255\n\0\0\0").unwrap_err();
        assert!(matches!(err, MediaError::Format { offset: 14, .. }), "{err}");
        assert!(decode_ppm(b"P6\n0 2\n255\n").is_err());
    }

    #[test]
    fn luma_examples() {
        let white = Frame::solid(0, 60.0, 1, 1, [255, 255, 255]).unwrap();
        assert!((luma(&white).data[0] - 255.0).abs() < 1e-9);
        let red = Frame::solid(0, 60.0, 1, 1, [255, 0, 0]).unwrap();
        assert!((luma(&red).data[0] - 76.245).abs() < 1e-9);
        let black = Frame::solid(0, 60.0, 4, 3, [0, 0, 0]).unwrap();
        assert!(luma(&black).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_examples() {
        let flat = GrayImage::new(5, 5, vec![42.0; 25]).unwrap();
        assert_eq!(laplacian_variance(&flat).unwrap(), 0.0);

        // Interior responses of a 4x4 0/255 checkerboard are ±1020, two of each.
        let board = checkerboard(4, 4);
        let oracle = laplacian_variance_oracle(&board);
        assert_eq!(oracle, 1020.0 * 1020.0);
        assert!((laplacian_variance(&board).unwrap() - oracle).abs() < 1e-6);

        let big = checkerboard(16, 16);
        let smooth = smooth3(&big);
        assert!(laplacian_variance_oracle(&smooth) < laplacian_variance_oracle(&big));
        assert!(laplacian_variance(&smooth).unwrap() < laplacian_variance(&big).unwrap());

        assert!(laplacian_variance(&GrayImage::new(2, 5, vec![0.0; 10]).unwrap()).is_err());
    }

    fn checker_frame(w: u32, h: u32) -> Frame {
        let pixels = (0..h)
            .flat_map(|y| (0..w).flat_map(move |x| if (x + y) % 2 == 0 { [0u8; 3] } else { [255u8; 3] }))
            .collect();
        Frame::new(0, 60.0, w, h, pixels).unwrap()
    }

    #[test]
    fn gate_examples() {
        let flat = Frame::solid(0, 60.0, 8, 8, [90, 90, 90]).unwrap();
        assert_eq!(heuristic_blur_gate(&flat, 10.0).unwrap(), BlurVerdict::Blurry);
        assert_eq!(heuristic_blur_gate(&flat, 0.0).unwrap(), BlurVerdict::Clear);
        assert_eq!(
            heuristic_blur_gate(&checker_frame(8, 8), 10.0).unwrap(),
            BlurVerdict::Clear
        );
        assert!(heuristic_blur_gate(&Frame::solid(0, 60.0, 2, 2, [0; 3]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn timestamps_follow_fps() {
        let f = Frame::solid(6, 60.0, 1, 1, [0; 3]).unwrap();
        assert!((f.timestamp_ms - 100.0).abs() < 1e-9);
        assert!(Frame::new(0, 60.0, 2, 2, vec![0; 11]).is_err());
    }

    proptest! {
        #[test]
        fn ppm_round_trip(w in 1u32..16, h in 1u32..16, seed in any::<u8>()) {
            let pixels: Vec<u8> = (0..3 * w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
            let bytes = encode_ppm(w, h, &pixels);
            let r = decode_ppm(&bytes).unwrap();
            prop_assert_eq!(encode_ppm(r.width, r.height, &r.pixels), bytes);
        }

        #[test]
        fn laplacian_ignores_offset(vals in prop::collection::vec(0.0f64..255.0, 25), c in -100.0f64..100.0) {
            let g = GrayImage::new(5, 5, vals.clone()).unwrap();
            let shifted = GrayImage::new(5, 5, vals.iter().map(|v| v + c).collect()).unwrap();
            let (a, b) = (laplacian_variance(&g).unwrap(), laplacian_variance(&shifted).unwrap());
            prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        }

        #[test]
        fn gate_monotone_in_threshold(vals in prop::collection::vec(any::<u8>(), 3 * 36), t1 in 0.0f64..5000.0, dt in 0.0f64..5000.0) {
            let f = Frame::new(0, 60.0, 6, 6, vals).unwrap();
            let low = heuristic_blur_gate(&f, t1).unwrap();
            let high = heuristic_blur_gate(&f, t1 + dt).unwrap();
            prop_assert!(!(low == BlurVerdict::Blurry && high == BlurVerdict::Clear));
        }
    }
}
