//! Axis-aligned box geometry: coordinate conversions, overlap metrics, and
//! greedy non-maximum suppression.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest denominator used when normalizing by areas that may vanish.
const MIN_DENOM: f64 = 1e-12;

/// Coordinate units carried by a [`BoxList`].
///
/// Individual boxes are unit-agnostic; mixing lists with different units is
/// rejected wherever two lists meet (pairwise IoU, cost construction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Coordinates as fractions of image size, in `[0, 1]`.
    Normalized,
    /// Coordinates in pixels (or any fixed length unit).
    Absolute,
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: coordinates must be finite with x1 <= x2 and y1 <= y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("boxes and scores differ in length: {boxes} boxes vs {scores} scores")]
    LengthMismatch { boxes: usize, scores: usize },
    #[error("units mismatch: {0:?} vs {1:?}")]
    UnitsMismatch(Units, Units),
    #[error("nms threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

/// Axis-aligned rectangle stored as corner coordinates `(x1, y1, x2, y2)`.
///
/// Construction enforces `x1 <= x2`, `y1 <= y2`, and finiteness; degenerate
/// zero-width or zero-height boxes are permitted. Serializes as a bare
/// four-element array `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(GeometryError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from center/size form. Fails on negative width or height.
    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn cxcywh(&self) -> [f64; 4] {
        [
            (self.x1 + self.x2) / 2.0,
            (self.y1 + self.y2) / 2.0,
            self.x2 - self.x1,
            self.y2 - self.y1,
        ]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Same box shifted by `(dx, dy)`. Offsets must be finite.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.xyxy()
    }
}

/// A set of boxes sharing one coordinate system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxList {
    boxes: Vec<BBox>,
    units: Units,
}

impl BoxList {
    pub fn new(boxes: Vec<BBox>, units: Units) -> Self {
        Self { boxes, units }
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&BBox> {
        self.boxes.get(i)
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BBox> {
        self.boxes.iter()
    }

    /// Errors unless `self` and `other` share the same units tag.
    pub fn check_same_units(&self, other: &BoxList) -> Result<(), GeometryError> {
        if self.units != other.units {
            return Err(GeometryError::UnitsMismatch(self.units, other.units));
        }
        Ok(())
    }
}

/// Intersection-over-union of two boxes.
///
/// Returns a value in `[0, 1]`; the union-empty case (two degenerate boxes)
/// yields 0 rather than NaN.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou - (hull - union) / hull` where hull is the smallest
/// enclosing box. Lies in `[-1, 1]`; equals IoU when one box contains the
/// other, and 1 only for identical positive-area boxes.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let iou_term = if union <= 0.0 { 0.0 } else { inter / union };
    let hull_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let hull_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = (hull_w * hull_h).max(MIN_DENOM);
    iou_term - (hull - union.max(0.0)) / hull
}

/// L1 distance between two boxes in center/size parameterization:
/// `|dcx| + |dcy| + |dw| + |dh|`.
pub fn l1_box_distance(a: &BBox, b: &BBox) -> f64 {
    let pa = a.cxcywh();
    let pb = b.cxcywh();
    pa.iter().zip(pb.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// Pairwise IoU between two lists, shaped `(a.len(), b.len())`.
///
/// The lists must share units.
pub fn iou_matrix(a: &BoxList, b: &BoxList) -> Result<Array2<f64>, GeometryError> {
    a.check_same_units(b)?;
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, ba) in a.iter().enumerate() {
        for (j, bb) in b.iter().enumerate() {
            out[[i, j]] = iou(ba, bb);
        }
    }
    Ok(out)
}

/// Greedy class-agnostic non-maximum suppression.
///
/// Processes boxes in descending score order (ties broken by lower index) and
/// suppresses any remaining box whose IoU with a kept box exceeds `threshold`
/// strictly. Returns kept indices in the order they were retained.
pub fn nms(boxes: &BoxList, scores: &[f64], threshold: f64) -> Result<Vec<usize>, GeometryError> {
    if boxes.len() != scores.len() {
        return Err(GeometryError::LengthMismatch {
            boxes: boxes.len(),
            scores: scores.len(),
        });
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(GeometryError::InvalidThreshold(threshold));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&boxes.boxes[i], &boxes.boxes[j]) > threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}
