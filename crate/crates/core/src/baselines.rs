//! Per-image difficulty scores. Higher score means "upload first".
//!
//! * `Random`: a seeded permutation rank.
//! * `Brenner`: negated Brenner focus measure, so blurrier images rank higher.
//! * `Top1Confidence`: negated mean over classes of the best class score.
//! * `Semantic`: dense rank of the discriminator's feature tuple.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::DetectionRecord;
use crate::discriminator::{decide, estimate_features, CaseLabel, ThresholdSet};
use crate::ingest::GrayImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("empty image list")]
    Empty,
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image {0:?}: width must be at least 3 for the Brenner measure")]
    TooNarrow(String),
    #[error("{image}: {found} class scores but class count is {expected}")]
    ClassCount { image: String, expected: usize, found: usize },
    #[error("no image for {0:?}")]
    MissingImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Brenner,
    #[serde(rename = "top1")]
    Top1Confidence,
    Semantic,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Random => "random",
            Method::Brenner => "brenner",
            Method::Top1Confidence => "top1",
            Method::Semantic => "semantic",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Method::Random),
            "brenner" | "blur" => Ok(Method::Brenner),
            "top1" | "top1-confidence" => Ok(Method::Top1Confidence),
            "semantic" => Ok(Method::Semantic),
            other => Err(format!("unknown method {other:?} (expected random, brenner, top1 or semantic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub image_id: String,
    pub score: f64,
    pub method: Method,
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<(), BaselineError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(BaselineError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Seeded random ranking.
///
/// The ids are sorted ascending, shuffled with a Fisher-Yates pass driven by
/// ChaCha8 seeded from `seed` (`rand_chacha::ChaCha8Rng::seed_from_u64`),
/// and each id's score is its position in the shuffled order. Output keeps
/// the input order.
pub fn random_scores(image_ids: &[String], seed: u64) -> Result<Vec<DifficultyScore>, BaselineError> {
    if image_ids.is_empty() {
        return Err(BaselineError::Empty);
    }
    check_unique(image_ids.iter().map(String::as_str))?;
    let mut sorted: Vec<&str> = image_ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let rank: BTreeMap<&str, usize> = sorted.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    Ok(image_ids
        .iter()
        .map(|id| DifficultyScore { image_id: id.clone(), score: rank[id.as_str()] as f64, method: Method::Random })
        .collect())
}

/// Brenner focus measure: sum over rows of squared differences between
/// pixels two columns apart. Exact integer arithmetic.
pub fn brenner(image: &GrayImage) -> Result<u128, BaselineError> {
    if image.width < 3 {
        return Err(BaselineError::TooNarrow(format!("{}x{}", image.width, image.height)));
    }
    let mut sum: u128 = 0;
    for row in image.pixels.chunks_exact(image.width) {
        for x in 0..image.width - 2 {
            let d = u64::from(row[x + 2].abs_diff(row[x]));
            sum += u128::from(d * d);
        }
    }
    Ok(sum)
}

/// Blur baseline scores: negated Brenner value for every id, in input order.
pub fn brenner_scores(
    image_ids: &[String],
    images: &BTreeMap<String, GrayImage>,
) -> Result<Vec<DifficultyScore>, BaselineError> {
    check_unique(image_ids.iter().map(String::as_str))?;
    image_ids
        .iter()
        .map(|id| {
            let img = images.get(id).ok_or_else(|| BaselineError::MissingImage(id.clone()))?;
            let v = brenner(img).map_err(|_| BaselineError::TooNarrow(id.clone()))?;
            Ok(DifficultyScore { image_id: id.clone(), score: -(v as f64), method: Method::Brenner })
        })
        .collect()
}

/// Mean over classes of the best score any box gives that class.
pub fn top1_confidence_score(record: &DetectionRecord, class_count: usize) -> Result<f64, BaselineError> {
    let mut best = vec![0.0f64; class_count];
    for d in &record.raw {
        if d.class_scores.len() != class_count {
            return Err(BaselineError::ClassCount {
                image: record.image_id.clone(),
                expected: class_count,
                found: d.class_scores.len(),
            });
        }
        for (b, &s) in best.iter_mut().zip(&d.class_scores) {
            *b = b.max(s);
        }
    }
    if class_count == 0 {
        return Ok(0.0);
    }
    Ok(best.iter().sum::<f64>() / class_count as f64)
}

pub fn top1_scores(records: &[&DetectionRecord], class_count: usize) -> Result<Vec<DifficultyScore>, BaselineError> {
    check_unique(records.iter().map(|r| r.image_id.as_str()))?;
    records
        .iter()
        .map(|r| {
            Ok(DifficultyScore {
                image_id: r.image_id.clone(),
                score: -top1_confidence_score(r, class_count)?,
                method: Method::Top1Confidence,
            })
        })
        .collect()
}

/// Sort key behind the semantic ranking, compared descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticKey {
    pub difficult: bool,
    pub mismatch: bool,
    pub estimated_count: usize,
    pub min_area_ratio: f64,
}

impl SemanticKey {
    pub fn of(record: &DetectionRecord, t: &ThresholdSet) -> Self {
        let f = estimate_features(record, t.tau_s);
        let (label, _) = decide(f.predicted_count, f.estimated_count, f.min_area_ratio, t);
        Self {
            difficult: label == CaseLabel::Difficult,
            mismatch: f.mismatch(),
            estimated_count: f.estimated_count,
            min_area_ratio: f.min_area_ratio,
        }
    }

    /// `Greater` means more difficult: classifier verdict first, then the
    /// step-1 mismatch, more estimated objects, smaller minimum area.
    pub fn cmp_difficulty(&self, other: &Self) -> Ordering {
        self.difficult
            .cmp(&other.difficult)
            .then(self.mismatch.cmp(&other.mismatch))
            .then(self.estimated_count.cmp(&other.estimated_count))
            .then(other.min_area_ratio.total_cmp(&self.min_area_ratio))
    }
}

/// Dense rank of [`SemanticKey`]: 0 for the easiest key, equal keys share a
/// score. The images the threshold classifier labels difficult always form
/// a prefix of the descending ranking.
pub fn semantic_scores(records: &[&DetectionRecord], t: &ThresholdSet) -> Vec<DifficultyScore> {
    let keys: Vec<SemanticKey> = records.iter().map(|r| SemanticKey::of(r, t)).collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp_difficulty(&keys[b]));
    let mut rank = vec![0usize; records.len()];
    let mut current = 0;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]].cmp_difficulty(&keys[order[w - 1]]) != Ordering::Equal {
            current += 1;
        }
        rank[order[w]] = current;
    }
    records
        .iter()
        .zip(rank)
        .map(|(r, k)| DifficultyScore { image_id: r.image_id.clone(), score: k as f64, method: Method::Semantic })
        .collect()
}
