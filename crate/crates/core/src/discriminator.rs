//! Difficult-case discriminator.
//!
//! A small-model preliminary result is reduced to a [`FeatureVector`]: how
//! many objects the small model reports at the 0.5 cutoff, how many boxes
//! survive the much lower noise threshold `tau_s`, and the smallest surviving
//! box relative to the image. The decision then runs three steps:
//!
//! 1. reported count equals surviving count: easy (nothing uncertain);
//! 2. surviving count above `tau_n`: difficult;
//! 3. smallest surviving area ratio below `tau_a`: difficult, else easy.
//!
//! All three thresholds are calibrated by exhaustive grid search over a
//! training set: `tau_s` by matching the total surviving box count to the
//! annotated object count, `tau_n`/`tau_a` by maximising accuracy of the
//! decision (fed with annotated features) against case labels.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{DetectionRecord, GroundTruth};
use crate::REPORT_CUTOFF;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscriminatorError {
    #[error("empty input")]
    EmptyInput,
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
    #[error("image id mismatch: truth {truth:?} vs record {record:?}")]
    ImageMismatch { truth: String, record: String },
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseLabel {
    Easy,
    Difficult,
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseLabel::Easy => "easy",
            CaseLabel::Difficult => "difficult",
        })
    }
}

impl FromStr for CaseLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "easy" => Ok(CaseLabel::Easy),
            "difficult" => Ok(CaseLabel::Difficult),
            other => Err(format!("unknown case label {other:?}")),
        }
    }
}

/// The three calibrated thresholds. Serialized as
/// `{"tau_s": x, "tau_n": n, "tau_a": y}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct ThresholdSet {
    /// Noise-box score threshold, in (0, 0.5].
    pub tau_s: f64,
    /// Object-count threshold.
    pub tau_n: u32,
    /// Minimum-object-area-ratio threshold, in (0, 1].
    pub tau_a: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    tau_s: f64,
    tau_n: u32,
    tau_a: f64,
}

impl TryFrom<RawThresholds> for ThresholdSet {
    type Error = DiscriminatorError;

    fn try_from(r: RawThresholds) -> Result<Self, Self::Error> {
        ThresholdSet::new(r.tau_s, r.tau_n, r.tau_a)
    }
}

impl ThresholdSet {
    pub fn new(tau_s: f64, tau_n: u32, tau_a: f64) -> Result<Self, DiscriminatorError> {
        if !(tau_s > 0.0 && tau_s <= 0.5) {
            return Err(DiscriminatorError::InvalidThreshold(format!("tau_s {tau_s} outside (0, 0.5]")));
        }
        if !(tau_a > 0.0 && tau_a <= 1.0) {
            return Err(DiscriminatorError::InvalidThreshold(format!("tau_a {tau_a} outside (0, 1]")));
        }
        Ok(Self { tau_s, tau_n, tau_a })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Boxes with top score >= 0.5.
    pub predicted_count: usize,
    /// Boxes with top score >= `tau_s`.
    pub estimated_count: usize,
    /// Smallest kept box area over image area; 1.0 when nothing is kept.
    pub min_area_ratio: f64,
}

impl FeatureVector {
    pub fn mismatch(&self) -> bool {
        self.predicted_count != self.estimated_count
    }
}

pub fn estimate_features(record: &DetectionRecord, tau_s: f64) -> FeatureVector {
    let mut predicted_count = 0;
    let mut estimated_count = 0;
    let mut min_area_ratio = 1.0f64;
    for d in &record.raw {
        let s = d.top_score();
        if s >= REPORT_CUTOFF {
            predicted_count += 1;
        }
        if s >= tau_s {
            estimated_count += 1;
            min_area_ratio = min_area_ratio.min(d.bbox.area_ratio(record.width, record.height));
        }
    }
    FeatureVector { predicted_count, estimated_count, min_area_ratio }
}

/// Which step of the decision produced the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionStep {
    CountsAgree,
    TooManyObjects,
    SmallObject,
    NoTrigger,
}

pub fn decide(
    predicted: usize,
    count: usize,
    min_area_ratio: f64,
    t: &ThresholdSet,
) -> (CaseLabel, DecisionStep) {
    if predicted == count {
        (CaseLabel::Easy, DecisionStep::CountsAgree)
    } else if count > t.tau_n as usize {
        (CaseLabel::Difficult, DecisionStep::TooManyObjects)
    } else if min_area_ratio < t.tau_a {
        (CaseLabel::Difficult, DecisionStep::SmallObject)
    } else {
        (CaseLabel::Easy, DecisionStep::NoTrigger)
    }
}

pub fn discriminate(record: &DetectionRecord, t: &ThresholdSet) -> CaseLabel {
    let f = estimate_features(record, t.tau_s);
    decide(f.predicted_count, f.estimated_count, f.min_area_ratio, t).0
}

/// Same decision, but with the annotated object count and annotated minimum
/// area ratio standing in for the estimates.
pub fn discriminate_with_truth(
    truth: &GroundTruth,
    record: &DetectionRecord,
    t: &ThresholdSet,
) -> Result<CaseLabel, DiscriminatorError> {
    if truth.image_id != record.image_id {
        return Err(DiscriminatorError::ImageMismatch {
            truth: truth.image_id.clone(),
            record: record.image_id.clone(),
        });
    }
    let predicted = record.count_at(REPORT_CUTOFF);
    Ok(decide(predicted, truth.objects.len(), truth.min_area_ratio(), t).0)
}

/// Inclusive, evenly spaced grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub const fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    /// Grid values. When `1 / step` is an integer the points are computed as
    /// `k / (1 / step)` so that e.g. 0.31 is the double nearest to 0.31.
    pub fn points(&self) -> Vec<f64> {
        if self.step.is_nan() || self.step <= 0.0 || self.hi < self.lo {
            return Vec::new();
        }
        let inv = 1.0 / self.step;
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        if (inv - inv.round()).abs() < 1e-9 && (self.lo * inv - (self.lo * inv).round()).abs() < 1e-6 {
            let denom = inv.round();
            let k0 = (self.lo * denom).round() as i64;
            (0..=n as i64).map(|i| (k0 + i) as f64 / denom).collect()
        } else {
            (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
        }
    }
}

pub const NOISE_GRID: Grid = Grid::new(0.05, 0.50, 0.01);
pub const AREA_GRID: Grid = Grid::new(0.01, 0.50, 0.01);
pub const COUNT_GRID_MAX: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    pub tau_s: f64,
    /// Signed `N_predict - N_truth` at `tau_s`.
    pub loss: i64,
    pub n_predict: u64,
    pub n_truth: u64,
}

/// Picks the grid value minimising `|N_predict(tau) - N_truth|` where both
/// are dataset totals; ties go to the smallest `tau`.
pub fn calibrate_noise_threshold(
    records: &[&DetectionRecord],
    truths: &[&GroundTruth],
    grid: Grid,
) -> Result<NoiseCalibration, DiscriminatorError> {
    if records.is_empty() || truths.is_empty() {
        return Err(DiscriminatorError::EmptyInput);
    }
    if records.len() != truths.len() {
        return Err(DiscriminatorError::LengthMismatch(format!(
            "{} records vs {} truths",
            records.len(),
            truths.len()
        )));
    }
    let n_truth: u64 = truths.iter().map(|t| t.objects.len() as u64).sum();
    let mut top: Vec<f64> = records.iter().flat_map(|r| r.raw.iter().map(|d| d.top_score())).collect();
    top.sort_by(f64::total_cmp);

    let mut best: Option<NoiseCalibration> = None;
    for tau in grid.points() {
        if !(tau > 0.0 && tau <= 0.5) {
            return Err(DiscriminatorError::InvalidThreshold(format!("grid value {tau} outside (0, 0.5]")));
        }
        let below = top.partition_point(|&s| s < tau);
        let n_predict = (top.len() - below) as u64;
        let loss = n_predict as i64 - n_truth as i64;
        if best.is_none_or(|b| loss.unsigned_abs() < b.loss.unsigned_abs()) {
            best = Some(NoiseCalibration { tau_s: tau, loss, n_predict, n_truth });
        }
    }
    best.ok_or(DiscriminatorError::EmptyInput)
}

/// Confusion counts with `Difficult` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: CaseLabel, actual: CaseLabel) {
        match (predicted, actual) {
            (CaseLabel::Difficult, CaseLabel::Difficult) => self.tp += 1,
            (CaseLabel::Difficult, CaseLabel::Easy) => self.fp += 1,
            (CaseLabel::Easy, CaseLabel::Easy) => self.tn += 1,
            (CaseLabel::Easy, CaseLabel::Difficult) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.correct(), self.total())
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, `2tp / (2tp + fp + fn)`.
    pub fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Exact comparison of F1 values by cross-multiplication.
    fn cmp_f1(&self, other: &Confusion) -> Ordering {
        let num = |c: &Confusion| u128::from(2 * c.tp);
        let den = |c: &Confusion| u128::from(2 * c.tp + c.fp + c.fn_).max(1);
        (num(self) * den(other)).cmp(&(num(other) * den(self)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionCalibration {
    pub tau_n: u32,
    pub tau_a: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Exhaustive search over `(tau_n, tau_a)` in `0..=n_max` x `a_grid`, scoring
/// [`discriminate_with_truth`] against `labels`. Highest accuracy wins, then
/// highest F1, then the lexicographically smallest pair.
pub fn calibrate_decision_thresholds(
    truths: &[&GroundTruth],
    records: &[&DetectionRecord],
    labels: &[CaseLabel],
    n_max: u32,
    a_grid: Grid,
) -> Result<DecisionCalibration, DiscriminatorError> {
    if truths.is_empty() {
        return Err(DiscriminatorError::EmptyInput);
    }
    if truths.len() != records.len() || truths.len() != labels.len() {
        return Err(DiscriminatorError::LengthMismatch(format!(
            "{} truths, {} records, {} labels",
            truths.len(),
            records.len(),
            labels.len()
        )));
    }
    // (reported count, annotated count, annotated min area ratio)
    let mut feats = Vec::with_capacity(truths.len());
    for (t, r) in truths.iter().zip(records) {
        if t.image_id != r.image_id {
            return Err(DiscriminatorError::ImageMismatch {
                truth: t.image_id.clone(),
                record: r.image_id.clone(),
            });
        }
        feats.push((r.count_at(REPORT_CUTOFF), t.objects.len(), t.min_area_ratio()));
    }

    let a_points = a_grid.points();
    let mut best: Option<(u32, f64, Confusion)> = None;
    for tau_n in 0..=n_max {
        for &tau_a in &a_points {
            let t = ThresholdSet { tau_s: REPORT_CUTOFF, tau_n, tau_a };
            let mut cm = Confusion::default();
            for (&(p, n, a), &label) in feats.iter().zip(labels) {
                cm.add(decide(p, n, a, &t).0, label);
            }
            let better = match &best {
                None => true,
                Some((_, _, b)) => match cm.correct().cmp(&b.correct()) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    // grid is visited in ascending lexicographic order, so an
                    // exact tie keeps the incumbent
                    Ordering::Equal => cm.cmp_f1(b) == Ordering::Greater,
                },
            };
            if better {
                best = Some((tau_n, tau_a, cm));
            }
        }
    }
    let (tau_n, tau_a, cm) = best.ok_or(DiscriminatorError::EmptyInput)?;
    Ok(DecisionCalibration {
        tau_n,
        tau_a,
        accuracy: cm.accuracy(),
        precision: cm.precision(),
        recall: cm.recall(),
        f1: cm.f1(),
        confusion: cm,
    })
}
