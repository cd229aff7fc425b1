//! Seeded synthetic datasets with the structure real small/big detector
//! traces show: missed objects still leave a sub-threshold box on the right
//! class, noise boxes sit far below that, and misses concentrate on crowded
//! images and small objects.
//!
//! All randomness comes from one ChaCha8 stream seeded with
//! `SynthConfig::seed`, consumed in image order, so a configuration fully
//! determines the output.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{BBox, DetectionRecord, GroundTruth, RawDetection};
use crate::ingest::Dataset;

pub const CANVAS_WIDTH: u32 = 640;
pub const CANVAS_HEIGHT: u32 = 480;
const PLACEMENT_ATTEMPTS: usize = 32;
const ASPECT_RANGE: (f64, f64) = (0.5, 2.0);
const OTHER_CLASS_MAX: f64 = 0.05;
const NOISE_AREA_RANGE: (f64, f64) = (0.002, 0.05);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("image {image}: could not place a box of area ratio {ratio} after {attempts} attempts")]
    Infeasible { image: String, ratio: f64, attempts: usize },
}

/// `p_miss = clamp(a - b * area_ratio + c * (count - 1), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MissModel {
    pub fn p_miss(&self, area_ratio: f64, count: usize) -> f64 {
        (self.a - self.b * area_ratio + self.c * (count as f64 - 1.0)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_count: usize,
    pub class_count: usize,
    /// Weight of each object count; index 0 is one object.
    pub count_weights: Vec<f64>,
    pub area_ratio_range: (f64, f64),
    pub miss_model: MissModel,
    pub detected_band: (f64, f64),
    pub missed_band: (f64, f64),
    pub noise_band: (f64, f64),
    /// Weight of each noise-box count; index 0 is no noise box.
    pub noise_box_weights: Vec<f64>,
    /// Probability that the big model finds an object the small one missed.
    pub big_recall: f64,
    /// Maximum coordinate jitter (pixels) between annotation and detection.
    pub jitter: f64,
    /// Planted datasets only: fraction of easy images in which one object is
    /// missed by both models. Such images stay easy (no count difference)
    /// and keep the count/area thresholds identifiable.
    pub shared_miss_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            image_count: 2000,
            class_count: 20,
            count_weights: vec![0.30, 0.22, 0.15, 0.10, 0.08, 0.05, 0.04, 0.03, 0.02, 0.01],
            area_ratio_range: (0.01, 0.60),
            miss_model: MissModel { a: 0.33, b: 0.80, c: 0.03 },
            detected_band: (0.60, 0.99),
            missed_band: (0.15, 0.35),
            noise_band: (0.01, 0.10),
            noise_box_weights: vec![0.3, 0.3, 0.2, 0.1, 0.1],
            big_recall: 1.0,
            jitter: 1.0,
            shared_miss_rate: 0.0,
        }
    }
}

impl SynthConfig {
    /// Defaults for planted datasets: the big model finds everything the
    /// small model misses except shared misses.
    pub fn planted() -> Self {
        Self { big_recall: 1.0, shared_miss_rate: 0.25, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.image_count == 0 || self.class_count == 0 {
            return bad("image_count and class_count must be positive".into());
        }
        let weights_ok = |w: &[f64]| {
            !w.is_empty() && w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().sum::<f64>() > 0.0
        };
        if !weights_ok(&self.count_weights) || self.count_weights.len() > 10 {
            return bad("count_weights must be 1..=10 non-negative weights with positive sum".into());
        }
        if !weights_ok(&self.noise_box_weights) {
            return bad("noise_box_weights must be non-negative with positive sum".into());
        }
        let (lo, hi) = self.area_ratio_range;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return bad(format!("area_ratio_range ({lo}, {hi}) must be ordered inside (0, 1)"));
        }
        for (name, (a, b)) in [
            ("detected_band", self.detected_band),
            ("missed_band", self.missed_band),
            ("noise_band", self.noise_band),
        ] {
            if !(0.0 <= a && a < b && b <= 1.0) {
                return bad(format!("{name} ({a}, {b}) must be ordered inside [0, 1]"));
            }
        }
        if self.missed_band.1 > 0.5 || self.detected_band.0 < 0.5 {
            return bad("missed_band must stay below 0.5 and detected_band above it".into());
        }
        if self.missed_band.0 <= OTHER_CLASS_MAX || self.noise_band.1 > self.missed_band.0 {
            return bad("bands must be ordered noise < missed and missed above other-class scores".into());
        }
        if !(self.big_recall > 0.0 && self.big_recall <= 1.0) {
            return bad(format!("big_recall {} outside (0, 1]", self.big_recall));
        }
        if !(0.0..=1.0).contains(&self.shared_miss_rate) {
            return bad(format!("shared_miss_rate {} outside [0, 1]", self.shared_miss_rate));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be non-negative".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.class_count).map(|c| format!("class{c:02}")).collect()
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..hi)
}

fn score(rng: &mut ChaCha8Rng, band: (f64, f64)) -> f64 {
    round_to(uniform(rng, band), 4)
}

/// Box covering `ratio` of the canvas, placed uniformly, coordinates rounded
/// to 1/100 pixel.
fn place_box(rng: &mut ChaCha8Rng, ratio: f64, image: &str) -> Result<BBox, SynthError> {
    let (w_img, h_img) = (f64::from(CANVAS_WIDTH), f64::from(CANVAS_HEIGHT));
    let area = ratio * w_img * h_img;
    // aspect = w / h must keep w <= W and h <= H
    let lo = ASPECT_RANGE.0.max(area / (h_img * h_img));
    let hi = ASPECT_RANGE.1.min(w_img * w_img / area);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if lo > hi {
            break;
        }
        let aspect = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let w = (area * aspect).sqrt().min(w_img);
        let h = (area / aspect).sqrt().min(h_img);
        let x = rng.gen_range(0.0..=(w_img - w));
        let y = rng.gen_range(0.0..=(h_img - h));
        let coords = [round_to(x, 2), round_to(y, 2), round_to(x + w, 2), round_to(y + h, 2)];
        if let Ok(b) = BBox::clamped(coords, CANVAS_WIDTH, CANVAS_HEIGHT) {
            return Ok(b);
        }
    }
    Err(SynthError::Infeasible { image: image.to_string(), ratio, attempts: PLACEMENT_ATTEMPTS })
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BBox, amount: f64) -> BBox {
    if amount == 0.0 {
        return *b;
    }
    let mut c = b.coords();
    for v in c.iter_mut() {
        *v = round_to(*v + rng.gen_range(-amount..=amount), 2);
    }
    BBox::clamped(c, CANVAS_WIDTH, CANVAS_HEIGHT).unwrap_or(*b)
}

fn object_scores(rng: &mut ChaCha8Rng, classes: usize, class_id: usize, top: f64) -> Vec<f64> {
    (0..classes)
        .map(|c| if c == class_id { top } else { round_to(rng.gen_range(0.0..OTHER_CLASS_MAX), 4) })
        .collect()
}

fn noise_boxes(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n: usize, image: &str) -> Result<Vec<RawDetection>, SynthError> {
    (0..n)
        .map(|_| {
            let ratio = uniform(rng, NOISE_AREA_RANGE);
            let bbox = place_box(rng, ratio, image)?;
            let class_id = rng.gen_range(0..cfg.class_count);
            let top = score(rng, cfg.noise_band);
            let class_scores = (0..cfg.class_count)
                .map(|c| if c == class_id { top } else { round_to(rng.gen_range(0.0..=top), 4) })
                .collect();
            Ok(RawDetection { bbox, class_scores })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Planted {
    tau_n: usize,
    tau_a: f64,
}

fn build(cfg: &SynthConfig, planted: Option<Planted>) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = WeightedIndex::new(&cfg.count_weights).expect("validated weights");
    let noise = WeightedIndex::new(&cfg.noise_box_weights).expect("validated weights");
    let mut ds = Dataset { class_names: cfg.class_names(), ..Default::default() };

    for i in 0..cfg.image_count {
        let id = format!("syn{i:05}");
        let k = counts.sample(&mut rng) + 1;
        let mut objects = Vec::with_capacity(k);
        for _ in 0..k {
            let ratio = uniform(&mut rng, cfg.area_ratio_range);
            let bbox = place_box(&mut rng, ratio, &id)?;
            objects.push((rng.gen_range(0..cfg.class_count), bbox));
        }
        let truth = GroundTruth { image_id: id.clone(), width: CANVAS_WIDTH, height: CANVAS_HEIGHT, objects };
        let ratios: Vec<f64> =
            truth.objects.iter().map(|(_, b)| b.area_ratio(CANVAS_WIDTH, CANVAS_HEIGHT)).collect();

        // per-object: missed by the small model, missed by both
        let mut small_miss = vec![false; k];
        let mut shared_miss = vec![false; k];
        match planted {
            None => {
                for (j, r) in ratios.iter().enumerate() {
                    small_miss[j] = rng.gen_bool(cfg.miss_model.p_miss(*r, k));
                }
            }
            Some(p) => {
                let min_ratio = truth.min_area_ratio();
                if k > p.tau_n || min_ratio < p.tau_a {
                    let smallest = (0..k)
                        .min_by(|&a, &b| ratios[a].total_cmp(&ratios[b]))
                        .expect("at least one object");
                    for (j, r) in ratios.iter().enumerate() {
                        small_miss[j] = j == smallest || rng.gen_bool(cfg.miss_model.p_miss(*r, k));
                    }
                } else if rng.gen_bool(cfg.shared_miss_rate) {
                    let j = rng.gen_range(0..k);
                    small_miss[j] = true;
                    shared_miss[j] = true;
                }
            }
        }

        let mut small_raw = Vec::with_capacity(k);
        let mut big_raw = Vec::with_capacity(k);
        for (j, (class_id, bbox)) in truth.objects.iter().enumerate() {
            let det_box = jitter_box(&mut rng, bbox, cfg.jitter);
            let s = score(&mut rng, if small_miss[j] { cfg.missed_band } else { cfg.detected_band });
            small_raw.push(RawDetection { bbox: det_box, class_scores: object_scores(&mut rng, cfg.class_count, *class_id, s) });

            let big_found = !shared_miss[j] && (!small_miss[j] || rng.gen_bool(cfg.big_recall));
            let s = score(&mut rng, if big_found { cfg.detected_band } else { cfg.missed_band });
            big_raw.push(RawDetection { bbox: det_box, class_scores: object_scores(&mut rng, cfg.class_count, *class_id, s) });
        }
        let n_small_noise = noise.sample(&mut rng);
        small_raw.extend(noise_boxes(&mut rng, cfg, n_small_noise, &id)?);
        let n_big_noise = noise.sample(&mut rng);
        big_raw.extend(noise_boxes(&mut rng, cfg, n_big_noise, &id)?);

        let record = |raw| DetectionRecord { image_id: id.clone(), width: CANVAS_WIDTH, height: CANVAS_HEIGHT, raw };
        ds.small.insert(id.clone(), record(small_raw));
        ds.big.insert(id.clone(), record(big_raw));
        ds.truths.insert(id, truth);
    }
    Ok(ds)
}

/// Dataset whose small-model misses follow the configured miss model.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    build(cfg, None)
}

/// Dataset in which the small model misses at least one object exactly on
/// images with more than `tau_n_star` objects or a smallest object below
/// `tau_a_star` of the image (the smallest object is always among the
/// misses), apart from configured shared misses on easy images.
pub fn generate_planted(cfg: &SynthConfig, tau_n_star: u32, tau_a_star: f64) -> Result<Dataset, SynthError> {
    if !(tau_a_star > 0.0 && tau_a_star <= 1.0) {
        return Err(SynthError::InvalidConfig(format!("tau_a_star {tau_a_star} outside (0, 1]")));
    }
    build(cfg, Some(Planted { tau_n: tau_n_star as usize, tau_a: tau_a_star }))
}

/// Images that satisfy the planted difficulty condition.
pub fn planted_difficult(ds: &Dataset, tau_n_star: u32, tau_a_star: f64) -> BTreeMap<String, bool> {
    ds.truths
        .iter()
        .map(|(id, t)| (id.clone(), t.objects.len() > tau_n_star as usize || t.min_area_ratio() < tau_a_star))
        .collect()
}
