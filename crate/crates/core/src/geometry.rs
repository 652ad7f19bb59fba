//! Integer box geometry: IoU, greedy NMS, short-edge ratio and mask-to-box
//! extraction.
//!
//! A box `(x, y, w, h)` covers the half-open pixel grid `[x, x+w) × [y, y+h)`,
//! so every area is an exact integer and IoU is an exact rational.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box has zero extent: w={w}, h={h}")]
    EmptyBox { w: u32, h: u32 },
    #[error("box ({x},{y},{w},{h}) exceeds image extent {image_w}x{image_h}")]
    OutOfImage {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Deserialize)]
struct RawBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.x, raw.y, raw.w, raw.h)
    }
}

/// Axis-aligned pixel rectangle with `w >= 1` and `h >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, GeometryError> {
        if w == 0 || h == 0 {
            return Err(GeometryError::EmptyBox { w, h });
        }
        if x.checked_add(w).is_none() || y.checked_add(h).is_none() {
            return Err(GeometryError::InvalidArgument(format!(
                "box ({x},{y},{w},{h}) overflows the coordinate range"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner coordinates `[x0, x1) × [y0, y1)`.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, GeometryError> {
        Self::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    /// Like [`BoundingBox::new`], but also checks the box fits the image.
    pub fn within(x: u32, y: u32, w: u32, h: u32, image_w: u32, image_h: u32) -> Result<Self, GeometryError> {
        let b = Self::new(x, y, w, h)?;
        b.check_within(image_w, image_h)?;
        Ok(b)
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn short_edge(&self) -> u32 {
        self.w.min(self.h)
    }

    pub fn contains_pixel(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn fits_within(&self, image_w: u32, image_h: u32) -> bool {
        self.right() <= image_w && self.bottom() <= image_h
    }

    pub fn check_within(&self, image_w: u32, image_h: u32) -> Result<(), GeometryError> {
        if self.fits_within(image_w, image_h) {
            Ok(())
        } else {
            Err(GeometryError::OutOfImage {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                image_w,
                image_h,
            })
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let ix = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let iy = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        u64::from(ix) * u64::from(iy)
    }

    pub fn union_area(&self, other: &BoundingBox) -> u64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// Twice the centre coordinates, so the centre stays integral.
    pub fn doubled_center(&self) -> (u64, u64) {
        (
            2 * u64::from(self.x) + u64::from(self.w),
            2 * u64::from(self.y) + u64::from(self.h),
        )
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

/// Exact non-negative rational `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        u128::from(self.num) * u128::from(other.den) == u128::from(other.num) * u128::from(self.den)
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (u128::from(self.num) * u128::from(other.den)).cmp(&(u128::from(other.num) * u128::from(self.den)))
    }
}

/// IoU as an exact rational `|a ∩ b| / |a ∪ b|`.
pub fn iou_exact(a: &BoundingBox, b: &BoundingBox) -> Ratio {
    Ratio {
        num: a.intersection_area(b),
        den: a.union_area(b),
    }
}

/// Intersection over union in `[0, 1]`; `0.0` for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    iou_exact(a, b).to_f64()
}

/// `min(w, h) / min(image_w, image_h)`.
pub fn short_edge_ratio(b: &BoundingBox, image_w: u32, image_h: u32) -> Result<f64, GeometryError> {
    if image_w == 0 || image_h == 0 {
        return Err(GeometryError::InvalidArgument(format!(
            "image extent {image_w}x{image_h} has a zero dimension"
        )));
    }
    Ok(f64::from(b.short_edge()) / f64::from(image_w.min(image_h)))
}

/// Which detector produced a box. The declaration order is the NMS
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "detector-a")]
    DetectorA,
    #[serde(rename = "detector-b")]
    DetectorB,
    #[serde(rename = "ensemble")]
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Polyp,
    Instrument,
}

/// A detection: geometry plus confidence, origin and class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub source: Source,
    pub label: Label,
}

impl ScoredBox {
    pub fn new(bbox: BoundingBox, score: f64, source: Source, label: Label) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidArgument(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score,
            source,
            label,
        })
    }

    pub fn polyp(bbox: BoundingBox, score: f64, source: Source) -> Result<Self, GeometryError> {
        Self::new(bbox, score, source, Label::Polyp)
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }
}

/// Greedy non-maximum suppression.
///
/// Candidates are ranked by descending score, then by source tag
/// (detector A before B), then by input position. A candidate is kept iff its
/// IoU with every already-kept box is `<= iou_threshold`. The result is in
/// rank order, hence sorted by descending score.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .total_cmp(&boxes[i].score)
            .then(boxes[i].source.cmp(&boxes[j].source))
            .then(i.cmp(&j))
    });

    let mut kept: Vec<ScoredBox> = Vec::with_capacity(boxes.len());
    for idx in order {
        let candidate = boxes[idx];
        if kept.iter().all(|k| iou(&k.bbox, &candidate.bbox) <= iou_threshold) {
            kept.push(candidate);
        }
    }
    kept
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(GeometryError::InvalidArgument(format!(
                "mask bits length {} != {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

pub const DEFAULT_MIN_COMPONENT_AREA: u64 = 16;

/// One tight bounding box per connected component of set pixels with at
/// least `min_area` pixels, ordered by the row-major position of each
/// component's first pixel.
pub fn mask_to_boxes(mask: &BinaryMask, min_area: u64, connectivity: Connectivity) -> Vec<BoundingBox> {
    const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const N8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    let neighbours: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };

    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();

    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0u64;
        while let Some(p) = stack.pop() {
            let (px, py) = (p % w, p / w);
            count += 1;
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
            for &(dx, dy) in neighbours {
                let nx = px as i64 + dx;
                let ny = py as i64 + dy;
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask.bits[q] && !visited[q] {
                    visited[q] = true;
                    stack.push(q);
                }
            }
        }
        if count >= min_area {
            out.push(BoundingBox {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
            });
        }
    }
    out
}
