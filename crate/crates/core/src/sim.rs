//! In-process offloading pipeline: route each image to the edge or the
//! cloud, merge the results, and account time and upload volume with an
//! analytic channel model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, DifficultyScore, Method};
use crate::discriminator::{discriminate, CaseLabel, ThresholdSet};
use crate::eval::{self, ApMode, EvalError, MetricsReport};
use crate::ingest::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no small-model trace for image {0:?}")]
    MissingSmallTrace(String),
    #[error("cloud-routed image {0:?} has no big-model trace")]
    MissingBigTrace(String),
    #[error("target ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("ratios must be ascending, got {0} after {1}")]
    UnsortedRatios(f64, f64),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("invalid channel model: {0}")]
    BadChannel(String),
    #[error("semantic method needs a threshold set")]
    MissingThresholds,
    #[error("no upload size for image {0:?}")]
    MissingImageBytes(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Edge,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub image_id: String,
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BytesPerImage {
    Fixed(u64),
    PerImage(BTreeMap<String, u64>),
}

/// Analytic cost model. Every uploaded image pays one round trip (which
/// also covers the result download), its transfer time and the cloud
/// inference time; every image pays the edge inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    pub rtt: f64,
    pub edge_infer_time: f64,
    pub cloud_infer_time: f64,
    pub bytes_per_image: BytesPerImage,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            bandwidth: 2.5e6,
            rtt: 0.02,
            edge_infer_time: 0.03,
            cloud_infer_time: 0.02,
            bytes_per_image: BytesPerImage::Fixed(100_000),
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("rtt", self.rtt),
            ("edge_infer_time", self.edge_infer_time),
            ("cloud_infer_time", self.cloud_infer_time),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::BadChannel(format!("{name} must be positive, got {v}")));
            }
        }
        match &self.bytes_per_image {
            BytesPerImage::Fixed(0) => Err(SimError::BadChannel("bytes_per_image must be positive".into())),
            BytesPerImage::PerImage(m) if m.values().any(|&v| v == 0) => {
                Err(SimError::BadChannel("bytes_per_image must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn bytes_for(&self, image_id: &str) -> Result<u64, SimError> {
        match &self.bytes_per_image {
            BytesPerImage::Fixed(b) => Ok(*b),
            BytesPerImage::PerImage(m) => {
                m.get(image_id).copied().ok_or_else(|| SimError::MissingImageBytes(image_id.to_string()))
            }
        }
    }

    /// Uses the dataset's per-image sizes when it has them.
    pub fn for_dataset(mut self, dataset: &Dataset) -> Self {
        if let Some(sizes) = &dataset.image_bytes {
            self.bytes_per_image = BytesPerImage::PerImage(sizes.clone());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub metrics: MetricsReport,
    pub total_time_s: f64,
    pub uploaded_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    #[serde(rename = "map")]
    pub map_value: f64,
    pub detected_objects: u64,
    pub total_time_s: f64,
    pub uploaded_bytes: u64,
}

/// Cloud iff the discriminator labels the small-model result difficult.
pub fn route_semantic(dataset: &Dataset, t: &ThresholdSet) -> Result<Vec<RouteDecision>, SimError> {
    dataset
        .image_ids()
        .map(|id| {
            let rec = dataset.small.get(id).ok_or_else(|| SimError::MissingSmallTrace(id.clone()))?;
            let route = match discriminate(rec, t) {
                CaseLabel::Difficult => Route::Cloud,
                CaseLabel::Easy => Route::Edge,
            };
            Ok(RouteDecision { image_id: id.clone(), route })
        })
        .collect()
}

/// Number of images sent to the cloud at `ratio`: `ceil(ratio * n)`.
pub fn cloud_quota(ratio: f64, n: usize) -> usize {
    // the epsilon keeps e.g. 0.3 * 10 from rounding up to 4
    ((ratio * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// The top `ceil(ratio * n)` images by score (ties by id) go to the cloud.
/// Decisions come back sorted by image id.
pub fn route_by_score(scores: &[DifficultyScore], ratio: f64) -> Result<Vec<RouteDecision>, SimError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SimError::BadRatio(ratio));
    }
    let mut seen = BTreeSet::new();
    if let Some(d) = scores.iter().find(|s| !seen.insert(s.image_id.as_str())) {
        return Err(SimError::DuplicateId(d.image_id.clone()));
    }
    let mut ranked: Vec<&DifficultyScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id)));
    let quota = cloud_quota(ratio, scores.len());
    let mut out: Vec<RouteDecision> = ranked
        .iter()
        .enumerate()
        .map(|(i, s)| RouteDecision {
            image_id: s.image_id.clone(),
            route: if i < quota { Route::Cloud } else { Route::Edge },
        })
        .collect();
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

pub fn uniform_routes(dataset: &Dataset, route: Route) -> Vec<RouteDecision> {
    dataset.image_ids().map(|id| RouteDecision { image_id: id.clone(), route }).collect()
}

pub fn simulate(
    dataset: &Dataset,
    decisions: &[RouteDecision],
    channel: &ChannelModel,
    mode: ApMode,
) -> Result<SimulationReport, SimError> {
    channel.validate()?;
    if let Some(d) = decisions.iter().find(|d| d.route == Route::Cloud && !dataset.big.contains_key(&d.image_id)) {
        return Err(SimError::MissingBigTrace(d.image_id.clone()));
    }
    let metrics = eval::end_to_end(
        decisions,
        &dataset.small,
        &dataset.big,
        &dataset.truths,
        dataset.class_count(),
        mode,
    )?;
    let mut per_upload_time = 0.0;
    let mut uploaded_bytes = 0u64;
    for d in decisions.iter().filter(|d| d.route == Route::Cloud) {
        let bytes = channel.bytes_for(&d.image_id)?;
        uploaded_bytes += bytes;
        per_upload_time += channel.rtt + bytes as f64 / channel.bandwidth + channel.cloud_infer_time;
    }
    let total_time_s = decisions.len() as f64 * channel.edge_infer_time + per_upload_time;
    Ok(SimulationReport { metrics, total_time_s, uploaded_bytes })
}

/// Difficulty scores for every image of the dataset, in image-id order.
pub fn method_scores(
    dataset: &Dataset,
    method: Method,
    seed: u64,
    thresholds: Option<&ThresholdSet>,
) -> Result<Vec<DifficultyScore>, SimError> {
    let ids: Vec<String> = dataset.image_ids().cloned().collect();
    let records = || -> Result<Vec<_>, SimError> {
        ids.iter()
            .map(|id| dataset.small.get(id).ok_or_else(|| SimError::MissingSmallTrace(id.clone())))
            .collect()
    };
    Ok(match method {
        Method::Random => baselines::random_scores(&ids, seed)?,
        Method::Brenner => baselines::brenner_scores(&ids, &dataset.images)?,
        Method::Top1Confidence => baselines::top1_scores(&records()?, dataset.class_count())?,
        Method::Semantic => {
            let t = thresholds.ok_or(SimError::MissingThresholds)?;
            baselines::semantic_scores(&records()?, t)
        }
    })
}

/// One simulation per target ratio, routing by the method's ranking.
pub fn sweep(
    dataset: &Dataset,
    scores: &[DifficultyScore],
    channel: &ChannelModel,
    ratios: &[f64],
    mode: ApMode,
) -> Result<Vec<SweepPoint>, SimError> {
    for w in ratios.windows(2) {
        if w[1] < w[0] {
            return Err(SimError::UnsortedRatios(w[1], w[0]));
        }
    }
    ratios
        .iter()
        .map(|&r| {
            let decisions = route_by_score(scores, r)?;
            let rep = simulate(dataset, &decisions, channel, mode)?;
            Ok(SweepPoint {
                target_ratio: r,
                achieved_ratio: rep.metrics.upload_ratio,
                map_value: rep.metrics.map_value,
                detected_objects: rep.metrics.detected_objects,
                total_time_s: rep.total_time_s,
                uploaded_bytes: rep.uploaded_bytes,
            })
        })
        .collect()
}
