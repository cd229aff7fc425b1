//! Dataset-level metrics: ground-truth case labels, VOC-style average
//! precision, true-positive object counts and upload ratio.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{best_unmatched, finalize, match_detections, FinalDetection, GroundTruth};
use crate::detect::DetectionRecord;
use crate::discriminator::{
    calibrate_decision_thresholds, calibrate_noise_threshold, CaseLabel, DecisionCalibration, DiscriminatorError,
    NoiseCalibration, ThresholdSet, AREA_GRID, COUNT_GRID_MAX, NOISE_GRID,
};
use crate::ingest::Dataset;
use crate::sim::{Route, RouteDecision};
use crate::{MATCH_IOU, REPORT_CUTOFF};

/// How `detected_objects` is counted; carried in every report.
pub const DETECTED_OBJECTS_CONVENTION: &str = "true_positives_iou_0.5_score_0.5";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("image sets differ: {0}")]
    KeyMismatch(String),
    #[error("iou threshold {0} outside (0, 1]")]
    BadIou(f64),
    #[error("detections for unknown image {0:?}")]
    UnknownImage(String),
    #[error("image {0:?} has no route")]
    Unrouted(String),
    #[error("image {0:?} routed more than once")]
    DuplicateRoute(String),
    #[error("no {which} trace for image {image:?}")]
    MissingTrace { which: &'static str, image: String },
    #[error("dataset has neither labels nor big-model traces")]
    NoLabels,
    #[error("no label for image {0:?}")]
    MissingLabel(String),
    #[error(transparent)]
    Discriminator(#[from] DiscriminatorError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApMode {
    /// VOC2007 11-point interpolation.
    #[default]
    #[serde(rename = "11pt")]
    ElevenPoint,
    /// Area under the monotone precision envelope.
    #[serde(rename = "allpt")]
    AllPoint,
}

impl fmt::Display for ApMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMode::ElevenPoint => "11pt",
            ApMode::AllPoint => "allpt",
        })
    }
}

impl FromStr for ApMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "11pt" => Ok(ApMode::ElevenPoint),
            "allpt" => Ok(ApMode::AllPoint),
            other => Err(format!("unknown AP mode {other:?} (expected 11pt or allpt)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "map")]
    pub map_value: f64,
    pub per_class_ap: BTreeMap<usize, f64>,
    pub detected_objects: u64,
    pub detected_objects_convention: String,
    pub upload_ratio: f64,
    pub image_count: u64,
    pub difficult_count: u64,
    pub ap_mode: ApMode,
}

/// Difficult iff the big model reports at least one more object than the
/// small model at `cutoff`.
pub fn label_cases(
    small: &BTreeMap<String, DetectionRecord>,
    big: &BTreeMap<String, DetectionRecord>,
    cutoff: f64,
) -> Result<BTreeMap<String, CaseLabel>, EvalError> {
    if let Some(id) = small.keys().find(|k| !big.contains_key(*k)).or_else(|| big.keys().find(|k| !small.contains_key(*k))) {
        return Err(EvalError::KeyMismatch(format!("{id:?} is not in both traces")));
    }
    Ok(small
        .iter()
        .map(|(id, s)| {
            let n_small = finalize(s, cutoff).len() as i64;
            let n_big = finalize(&big[id], cutoff).len() as i64;
            let label = if n_big - n_small >= 1 { CaseLabel::Difficult } else { CaseLabel::Easy };
            (id.clone(), label)
        })
        .collect())
}

/// Manifest labels when present, otherwise derived from the two traces.
pub fn dataset_labels(ds: &Dataset) -> Result<BTreeMap<String, CaseLabel>, EvalError> {
    if let Some(l) = &ds.labels {
        return Ok(l.clone());
    }
    if ds.big.is_empty() {
        return Err(EvalError::NoLabels);
    }
    label_cases(&ds.small, &ds.big, REPORT_CUTOFF)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCalibration {
    pub thresholds: ThresholdSet,
    pub noise: NoiseCalibration,
    pub decision: DecisionCalibration,
}

/// Grid calibration of all three thresholds against the dataset's labels.
pub fn calibrate_dataset(ds: &Dataset) -> Result<DatasetCalibration, EvalError> {
    let labels = dataset_labels(ds)?;
    let mut records = Vec::new();
    let mut truths = Vec::new();
    let mut actual = Vec::new();
    for (id, t) in &ds.truths {
        let r = ds.small.get(id).ok_or_else(|| EvalError::MissingTrace { which: "small", image: id.clone() })?;
        let l = labels.get(id).ok_or_else(|| EvalError::MissingLabel(id.clone()))?;
        records.push(r);
        truths.push(t);
        actual.push(*l);
    }
    let noise = calibrate_noise_threshold(&records, &truths, NOISE_GRID)?;
    let decision = calibrate_decision_thresholds(&truths, &records, &actual, COUNT_GRID_MAX, AREA_GRID)?;
    let thresholds = ThresholdSet::new(noise.tau_s, decision.tau_n, decision.tau_a)?;
    Ok(DatasetCalibration { thresholds, noise, decision })
}

/// A final detection tagged with the image it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetection {
    pub image_id: String,
    pub detection: FinalDetection,
}

fn cmp_ranked(a: &ImageDetection, b: &ImageDetection) -> Ordering {
    b.detection
        .score
        .total_cmp(&a.detection.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| a.detection.bbox.cmp_coords(&b.detection.bbox))
}

/// Precision/recall after each detection of the ranked list.
pub fn pr_curve(
    dets: &[ImageDetection],
    class_id: usize,
    truths: &BTreeMap<String, GroundTruth>,
    iou_min: f64,
) -> Result<(Vec<(f64, f64)>, usize), EvalError> {
    if !(iou_min > 0.0 && iou_min <= 1.0) {
        return Err(EvalError::BadIou(iou_min));
    }
    let npos: usize = truths.values().map(|t| t.objects.iter().filter(|(c, _)| *c == class_id).count()).sum();
    let mut ranked: Vec<&ImageDetection> = dets.iter().filter(|d| d.detection.class_id == class_id).collect();
    ranked.sort_by(|a, b| cmp_ranked(a, b));

    let mut taken: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(ranked.len());
    for d in ranked {
        let truth = truths.get(&d.image_id).ok_or_else(|| EvalError::UnknownImage(d.image_id.clone()))?;
        let used = taken.entry(d.image_id.as_str()).or_insert_with(|| vec![false; truth.objects.len()]);
        match best_unmatched(&d.detection.bbox, class_id, &truth.objects, used, iou_min) {
            Some(ti) => {
                used[ti] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = if npos == 0 { 0.0 } else { tp as f64 / npos as f64 };
        points.push((precision, recall));
    }
    Ok((points, npos))
}

/// Average precision of one class over the whole dataset. Zero when the
/// class has no annotated instance.
pub fn average_precision(
    dets: &[ImageDetection],
    class_id: usize,
    truths: &BTreeMap<String, GroundTruth>,
    iou_min: f64,
    mode: ApMode,
) -> Result<f64, EvalError> {
    let (points, npos) = pr_curve(dets, class_id, truths, iou_min)?;
    if npos == 0 {
        return Ok(0.0);
    }
    Ok(match mode {
        ApMode::ElevenPoint => {
            let mut sum = 0.0;
            for k in 0..=10 {
                let r = k as f64 / 10.0;
                let p = points.iter().filter(|(_, rec)| *rec >= r).map(|(p, _)| *p).fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApMode::AllPoint => {
            let mut mrec = Vec::with_capacity(points.len() + 2);
            let mut mpre = Vec::with_capacity(points.len() + 2);
            mrec.push(0.0);
            mpre.push(0.0);
            for &(p, r) in &points {
                mrec.push(r);
                mpre.push(p);
            }
            mrec.push(1.0);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len()).filter(|&i| mrec[i] != mrec[i - 1]).map(|i| (mrec[i] - mrec[i - 1]) * mpre[i]).sum()
        }
    })
}

/// mAP over classes that have at least one annotated object, plus the
/// true-positive object count.
pub fn evaluate(
    final_per_image: &BTreeMap<String, Vec<FinalDetection>>,
    truths: &BTreeMap<String, GroundTruth>,
    class_count: usize,
    mode: ApMode,
) -> Result<MetricsReport, EvalError> {
    if let Some(id) = final_per_image.keys().find(|k| !truths.contains_key(*k)) {
        return Err(EvalError::UnknownImage(id.clone()));
    }
    let all: Vec<ImageDetection> = final_per_image
        .iter()
        .flat_map(|(id, dets)| dets.iter().map(|d| ImageDetection { image_id: id.clone(), detection: *d }))
        .collect();

    let mut per_class_ap = BTreeMap::new();
    for c in 0..class_count {
        let present = truths.values().any(|t| t.objects.iter().any(|(tc, _)| *tc == c));
        if present {
            per_class_ap.insert(c, average_precision(&all, c, truths, MATCH_IOU, mode)?);
        }
    }
    let map_value = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };

    let mut detected_objects = 0u64;
    for (id, truth) in truths {
        let Some(dets) = final_per_image.get(id) else { continue };
        let reported: Vec<FinalDetection> = dets.iter().copied().filter(|d| d.score >= REPORT_CUTOFF).collect();
        detected_objects += match_detections(&reported, truth, MATCH_IOU).len() as u64;
    }

    Ok(MetricsReport {
        map_value,
        per_class_ap,
        detected_objects,
        detected_objects_convention: DETECTED_OBJECTS_CONVENTION.to_string(),
        upload_ratio: 0.0,
        image_count: truths.len() as u64,
        difficult_count: 0,
        ap_mode: mode,
    })
}

/// Checks that `decisions` route every image in `truths` exactly once.
pub fn route_map<'a>(
    decisions: &'a [RouteDecision],
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<BTreeMap<&'a str, Route>, EvalError> {
    let mut routes = BTreeMap::new();
    for d in decisions {
        if !truths.contains_key(&d.image_id) {
            return Err(EvalError::UnknownImage(d.image_id.clone()));
        }
        if routes.insert(d.image_id.as_str(), d.route).is_some() {
            return Err(EvalError::DuplicateRoute(d.image_id.clone()));
        }
    }
    if let Some(id) = truths.keys().find(|k| !routes.contains_key(k.as_str())) {
        return Err(EvalError::Unrouted(id.clone()));
    }
    Ok(routes)
}

/// Merged evaluation: small-model results for edge-routed images, big-model
/// results for cloud-routed ones.
pub fn end_to_end(
    decisions: &[RouteDecision],
    small: &BTreeMap<String, DetectionRecord>,
    big: &BTreeMap<String, DetectionRecord>,
    truths: &BTreeMap<String, GroundTruth>,
    class_count: usize,
    mode: ApMode,
) -> Result<MetricsReport, EvalError> {
    let routes = route_map(decisions, truths)?;
    let mut merged = BTreeMap::new();
    let mut cloud = 0u64;
    for (id, route) in &routes {
        let (which, traces) = match route {
            Route::Edge => ("small", small),
            Route::Cloud => {
                cloud += 1;
                ("big", big)
            }
        };
        let rec = traces
            .get(*id)
            .ok_or_else(|| EvalError::MissingTrace { which, image: id.to_string() })?;
        merged.insert(id.to_string(), finalize(rec, REPORT_CUTOFF));
    }
    let mut report = evaluate(&merged, truths, class_count, mode)?;
    report.difficult_count = cloud;
    report.upload_ratio = if routes.is_empty() { 0.0 } else { cloud as f64 / routes.len() as f64 };
    Ok(report)
}
