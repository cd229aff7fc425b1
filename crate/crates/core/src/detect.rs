//! Boxes, detections, annotations and the geometric primitives shared by the
//! rest of the crate.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box coordinate is not finite")]
    NonFinite,
    #[error("box coordinate is negative")]
    Negative,
    #[error("degenerate box: [{0}, {1}, {2}, {3}]")]
    Degenerate(f64, f64, f64, f64),
}

/// Axis-aligned box in pixel coordinates, origin top-left.
///
/// Always satisfies `0 <= xmin < xmax` and `0 <= ymin < ymax`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if xmin < 0.0 || ymin < 0.0 {
            return Err(GeometryError::Negative);
        }
        if xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::Degenerate(xmin, ymin, xmax, ymax));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    /// Clamps raw detector coordinates into `[0, width] x [0, height]` before
    /// validating. Boxes that collapse after clamping are still rejected.
    pub fn clamped(
        coords: [f64; 4],
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let (w, h) = (f64::from(width), f64::from(height));
        let [x0, y0, x1, y1] = coords;
        Self::new(x0.clamp(0.0, w), y0.clamp(0.0, h), x1.clamp(0.0, w), y1.clamp(0.0, h))
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    /// Fraction of a `width x height` image covered by this box.
    pub fn area_ratio(&self, width: u32, height: u32) -> f64 {
        self.area() / (f64::from(width) * f64::from(height))
    }

    /// Lexicographic order on `(xmin, ymin, xmax, ymax)`.
    pub fn cmp_coords(&self, other: &BBox) -> Ordering {
        self.coords()
            .iter()
            .zip(other.coords().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.xmax <= f64::from(width) && self.ymax <= f64::from(height)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One box of a small- or big-model trace, carrying a score for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub bbox: BBox,
    pub class_scores: Vec<f64>,
}

impl RawDetection {
    /// Best class and its score. Ties go to the lowest class id.
    pub fn top_class(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (c, &s) in self.class_scores.iter().enumerate() {
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((c, s)),
            }
        }
        best
    }

    pub fn top_score(&self) -> f64 {
        self.top_class().map_or(0.0, |(_, s)| s)
    }
}

/// Preliminary output of a detector for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub raw: Vec<RawDetection>,
}

impl DetectionRecord {
    pub fn empty(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self { image_id: image_id.into(), width, height, raw: Vec::new() }
    }

    /// Number of raw boxes whose top score reaches `threshold`.
    pub fn count_at(&self, threshold: f64) -> usize {
        self.raw.iter().filter(|r| r.top_score() >= threshold).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalDetection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub score: f64,
}

/// Ordering used for reported detections: score descending, then box
/// coordinates ascending, then class id ascending.
pub fn cmp_final(a: &FinalDetection, b: &FinalDetection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.cmp_coords(&b.bbox))
        .then_with(|| a.class_id.cmp(&b.class_id))
}

/// Reduces every raw detection to its top class and keeps those scoring at
/// least `cutoff`.
pub fn finalize(record: &DetectionRecord, cutoff: f64) -> Vec<FinalDetection> {
    let mut out: Vec<FinalDetection> = record
        .raw
        .iter()
        .filter_map(|r| {
            let (class_id, score) = r.top_class()?;
            (score >= cutoff).then_some(FinalDetection { bbox: r.bbox, class_id, score })
        })
        .collect();
    out.sort_by(cmp_final);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<(usize, BBox)>,
}

impl GroundTruth {
    /// Smallest annotated box area over the image area; 1.0 when empty.
    pub fn min_area_ratio(&self) -> f64 {
        self.objects
            .iter()
            .map(|(_, b)| b.area_ratio(self.width, self.height))
            .fold(1.0, f64::min)
    }
}

/// Greedy one-to-one matching of detections against same-class annotations.
///
/// Detections are visited by descending score (stable on input order); each
/// takes the unmatched annotation with the highest IoU at or above `iou_min`,
/// ties going to the lowest annotation index. Returns `(det_index,
/// truth_index)` pairs in visiting order.
pub fn match_detections(
    dets: &[FinalDetection],
    truth: &GroundTruth,
    iou_min: f64,
) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; truth.objects.len()];
    let mut pairs = Vec::new();
    for di in order {
        let det = &dets[di];
        if let Some(ti) = best_unmatched(&det.bbox, det.class_id, &truth.objects, &taken, iou_min) {
            taken[ti] = true;
            pairs.push((di, ti));
        }
    }
    pairs
}

pub(crate) fn best_unmatched(
    bbox: &BBox,
    class_id: usize,
    objects: &[(usize, BBox)],
    taken: &[bool],
    iou_min: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (ti, (c, tb)) in objects.iter().enumerate() {
        if taken[ti] || *c != class_id {
            continue;
        }
        let v = iou(bbox, tb);
        if v < iou_min {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((ti, v));
        }
    }
    best.map(|(ti, _)| ti)
}
