//! Independent reference implementations and random instance generators
//! shared by the integration tests. Nothing here calls the library code it
//! is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use hcg::eval::ImageDetection;
use hcg::{BBox, CaseLabel, DetectionRecord, FinalDetection, GroundTruth, RawDetection, ThresholdSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

// ---- discriminator references ----

fn top(scores: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &s in scores {
        if s > m {
            m = s;
        }
    }
    m
}

fn ratio(c: [f64; 4], w: u32, h: u32) -> f64 {
    ((c[2] - c[0]) * (c[3] - c[1])) / (f64::from(w) * f64::from(h))
}

/// Difficult iff counts disagree and either trigger fires.
pub fn ref_label(pred: usize, count: usize, min_ratio: f64, tau_n: u32, tau_a: f64) -> bool {
    pred != count && (count as u64 > u64::from(tau_n) || min_ratio < tau_a)
}

pub fn ref_discriminate(rec: &DetectionRecord, t: &ThresholdSet) -> CaseLabel {
    let tops: Vec<f64> = rec.raw.iter().map(|d| top(&d.class_scores)).collect();
    let pred = tops.iter().filter(|&&s| s >= 0.5).count();
    let kept: Vec<usize> = (0..tops.len()).filter(|&i| tops[i] >= t.tau_s).collect();
    let min_ratio = kept
        .iter()
        .map(|&i| ratio(rec.raw[i].bbox.coords(), rec.width, rec.height))
        .reduce(f64::min)
        .unwrap_or(1.0);
    if ref_label(pred, kept.len(), min_ratio, t.tau_n, t.tau_a) {
        CaseLabel::Difficult
    } else {
        CaseLabel::Easy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefCalibration {
    pub tau_n: u32,
    pub tau_a: f64,
    pub correct: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Evaluates every grid pair, then picks the best by sorting the whole
/// candidate list.
pub fn ref_calibrate(truths: &[&GroundTruth], recs: &[&DetectionRecord], labels: &[CaseLabel]) -> RefCalibration {
    let feats: Vec<(usize, usize, f64)> = truths
        .iter()
        .zip(recs)
        .map(|(t, r)| {
            let pred = r.raw.iter().filter(|d| top(&d.class_scores) >= 0.5).count();
            let min = t.objects.iter().map(|(_, b)| ratio(b.coords(), t.width, t.height)).reduce(f64::min).unwrap_or(1.0);
            (pred, t.objects.len(), min)
        })
        .collect();
    let mut cands = Vec::new();
    for tau_n in 0..=10u32 {
        for k in 1..=50u32 {
            let tau_a = f64::from(k) / 100.0;
            let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
            for (&(p, n, a), l) in feats.iter().zip(labels) {
                let d = ref_label(p, n, a, tau_n, tau_a);
                match (d, *l == CaseLabel::Difficult) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fn_ += 1,
                }
            }
            cands.push((RefCalibration { tau_n, tau_a, correct: tp + tn, tp, fp, fn_ }, k));
        }
    }
    cands.sort_by(|(x, kx), (y, ky)| {
        // f1 = 2tp / (2tp + fp + fn); an empty denominator counts as 0
        let f1 = |c: &RefCalibration| (2 * c.tp as u128, (2 * c.tp + c.fp + c.fn_).max(1) as u128);
        let ((nx, dx), (ny, dy)) = (f1(x), f1(y));
        y.correct
            .cmp(&x.correct)
            .then((ny * dx).cmp(&(nx * dy)))
            .then(x.tau_n.cmp(&y.tau_n))
            .then(kx.cmp(ky))
    });
    cands[0].0
}

/// Brute-force noise threshold scan over k/100, k = 5..=50.
pub fn ref_noise(recs: &[&DetectionRecord], truths: &[&GroundTruth]) -> (f64, i64) {
    let n_truth: i64 = truths.iter().map(|t| t.objects.len() as i64).sum();
    let mut best: Option<(f64, i64)> = None;
    for k in 5..=50u32 {
        let tau = f64::from(k) / 100.0;
        let n: i64 = recs.iter().map(|r| r.raw.iter().filter(|d| top(&d.class_scores) >= tau).count() as i64).sum();
        let loss = n - n_truth;
        if best.is_none_or(|(_, l)| loss.abs() < l.abs()) {
            best = Some((tau, loss));
        }
    }
    best.unwrap()
}

// ---- AP reference ----

fn ref_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

/// Per-rank TP flags for one class after greedy matching.
fn ref_flags(dets: &[ImageDetection], class_id: usize, truths: &BTreeMap<String, GroundTruth>) -> (Vec<bool>, usize) {
    let mut ranked: Vec<&ImageDetection> = dets.iter().filter(|d| d.detection.class_id == class_id).collect();
    ranked.sort_by(|a, b| {
        let (ca, cb) = (a.detection.bbox.coords(), b.detection.bbox.coords());
        b.detection
            .score
            .partial_cmp(&a.detection.score)
            .unwrap()
            .then(a.image_id.cmp(&b.image_id))
            .then(ca.partial_cmp(&cb).unwrap())
    });
    let npos = truths.values().flat_map(|t| &t.objects).filter(|(c, _)| *c == class_id).count();
    let mut used: BTreeMap<(String, usize), ()> = BTreeMap::new();
    let mut flags = Vec::new();
    for d in ranked {
        let t = &truths[&d.image_id];
        let mut best: Option<(f64, usize)> = None;
        for (i, (c, b)) in t.objects.iter().enumerate() {
            if *c != class_id || used.contains_key(&(d.image_id.clone(), i)) {
                continue;
            }
            let v = ref_iou(d.detection.bbox.coords(), b.coords());
            if v >= 0.5 && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, i));
            }
        }
        if let Some((_, i)) = best {
            used.insert((d.image_id.clone(), i), ());
        }
        flags.push(best.is_some());
    }
    (flags, npos)
}

/// (11-point AP, all-point AP) from the raw PR points.
pub fn ref_ap(dets: &[ImageDetection], class_id: usize, truths: &BTreeMap<String, GroundTruth>) -> (f64, f64) {
    let (flags, npos) = ref_flags(dets, class_id, truths);
    if npos == 0 {
        return (0.0, 0.0);
    }
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut tp = 0usize;
    for (k, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        prec.push(tp as f64 / (k + 1) as f64);
        rec.push(tp as f64 / npos as f64);
    }
    let best_from = |i: usize| prec[i..].iter().cloned().fold(0.0, f64::max);
    let mut eleven = 0.0;
    for t in 0..=10 {
        let thr = f64::from(t) / 10.0;
        let p = (0..prec.len()).filter(|&i| rec[i] >= thr).map(|i| prec[i]).fold(0.0, f64::max);
        eleven += p;
    }
    // every TP raises recall by 1/npos; weight it by the best precision
    // reachable from that rank on
    let all: f64 = (0..flags.len()).filter(|&i| flags[i]).map(|i| best_from(i) / npos as f64).sum();
    (eleven / 11.0, all)
}

// ---- random instances ----

fn int_box(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BBox {
    let x0 = rng.gen_range(0..w - 1);
    let y0 = rng.gen_range(0..h - 1);
    let x1 = rng.gen_range(x0 + 1..=w);
    let y1 = rng.gen_range(y0 + 1..=h);
    BBox::new(f64::from(x0), f64::from(y0), f64::from(x1), f64::from(y1)).unwrap()
}

/// Scores on a 0.01 lattice so they land exactly on grid thresholds.
fn lattice_score(rng: &mut ChaCha8Rng) -> f64 {
    f64::from(rng.gen_range(0..=99u32)) / 100.0
}

pub struct DiscInstance {
    pub truths: Vec<GroundTruth>,
    pub records: Vec<DetectionRecord>,
    pub labels: Vec<CaseLabel>,
    pub thresholds: ThresholdSet,
}

/// Up to 200 images on a 100x100 canvas with lattice scores and integer
/// boxes, so features routinely sit exactly on threshold values.
pub fn random_disc_instance(seed: u64) -> DiscInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=200);
    let classes = rng.gen_range(1..=3);
    let (w, h) = (100, 100);
    let mut truths = Vec::new();
    let mut records = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let id = format!("r{i:03}");
        let k = rng.gen_range(0..=12);
        let objects = (0..k).map(|_| (rng.gen_range(0..classes), int_box(&mut rng, w, h))).collect();
        let raw = (0..rng.gen_range(0..=14))
            .map(|_| RawDetection {
                bbox: int_box(&mut rng, w, h),
                class_scores: (0..classes).map(|_| lattice_score(&mut rng)).collect(),
            })
            .collect();
        truths.push(GroundTruth { image_id: id.clone(), width: w, height: h, objects });
        records.push(DetectionRecord { image_id: id, width: w, height: h, raw });
        labels.push(if rng.gen_bool(0.5) { CaseLabel::Difficult } else { CaseLabel::Easy });
    }
    let thresholds = ThresholdSet::new(
        f64::from(rng.gen_range(1..=50u32)) / 100.0,
        rng.gen_range(0..=10),
        f64::from(rng.gen_range(1..=50u32)) / 100.0,
    )
    .unwrap();
    DiscInstance { truths, records, labels, thresholds }
}

pub struct ApInstance {
    pub dets: Vec<ImageDetection>,
    pub truths: BTreeMap<String, GroundTruth>,
    pub classes: usize,
}

/// A few images on a 12x12 canvas with at most 6 detections per class, so
/// overlaps, duplicate matches and score ties are common.
pub fn random_ap_instance(seed: u64) -> ApInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.gen_range(1..=2);
    let images = rng.gen_range(1..=3);
    let (w, h) = (12, 12);
    let mut truths = BTreeMap::new();
    for i in 0..images {
        let id = format!("m{i}");
        let objects = (0..rng.gen_range(0..=4)).map(|_| (rng.gen_range(0..classes), int_box(&mut rng, w, h))).collect();
        truths.insert(id.clone(), GroundTruth { image_id: id, width: w, height: h, objects });
    }
    let ids: Vec<String> = truths.keys().cloned().collect();
    let mut dets = Vec::new();
    for c in 0..classes {
        for _ in 0..rng.gen_range(0..=6) {
            let image_id = ids[rng.gen_range(0..ids.len())].clone();
            // reuse an annotated box now and then so exact hits occur
            let t = &truths[&image_id];
            let bbox = match t.objects.iter().find(|(tc, _)| *tc == c) {
                Some((_, b)) if rng.gen_bool(0.4) => *b,
                _ => int_box(&mut rng, w, h),
            };
            let score = f64::from(rng.gen_range(10..=19u32)) / 20.0;
            dets.push(ImageDetection { image_id, detection: FinalDetection { bbox, class_id: c, score } });
        }
    }
    ApInstance { dets, truths, classes }
}
