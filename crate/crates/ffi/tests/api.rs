//! The C entry points called from Rust, checked against the library.

use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use hcg::eval::calibrate_dataset;
use hcg::ingest::Dataset;
use hcg::sim::{method_scores, route_semantic, simulate, sweep, uniform_routes, ChannelModel};
use hcg::synth::{generate, generate_planted, SynthConfig};
use hcg::{ApMode, CaseLabel, Route, ThresholdSet};
use hcg_ffi::*;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let n = unsafe { hcg_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n];
    unsafe { hcg_last_error_message(buf.as_mut_ptr(), n) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

struct Ds(*mut HcgDataset);

impl Drop for Ds {
    fn drop(&mut self) {
        unsafe { hcg_dataset_free(self.0) }
    }
}

struct Th(*mut HcgThresholds);

impl Drop for Th {
    fn drop(&mut self) {
        unsafe { hcg_thresholds_free(self.0) }
    }
}

fn load(manifest: &Path) -> Ds {
    let mut p = ptr::null_mut();
    let st = unsafe { hcg_dataset_load(cstr(manifest).as_ptr(), &mut p) };
    assert_eq!(st, HcgStatus::Ok, "{}", last_error());
    Ds(p)
}

fn saved(ds: &Dataset) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let m = ds.save(dir.path()).unwrap();
    (dir, m)
}

fn thresholds(t: &ThresholdSet) -> Th {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { hcg_thresholds_new(t.tau_s, t.tau_n, t.tau_a, &mut p) }, HcgStatus::Ok);
    Th(p)
}

#[test]
fn dataset_ids_in_byte_order() {
    let ds = load(&fixture("eval3/manifest.json"));
    assert_eq!(unsafe { hcg_dataset_image_count(ds.0) }, 3);
    let mut ids = Vec::new();
    for i in 0..3 {
        let mut need = 0usize;
        let st = unsafe { hcg_dataset_image_id(ds.0, i, ptr::null_mut(), 0, &mut need) };
        assert_eq!(st, HcgStatus::BufferTooSmall);
        let mut buf = vec![0 as c_char; need];
        assert_eq!(unsafe { hcg_dataset_image_id(ds.0, i, buf.as_mut_ptr(), need, ptr::null_mut()) }, HcgStatus::Ok);
        ids.push(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string());
    }
    assert_eq!(ids, ["img_a", "img_b", "img_c"]);
    let st = unsafe { hcg_dataset_image_id(ds.0, 3, ptr::null_mut(), 0, ptr::null_mut()) };
    assert_eq!(st, HcgStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
}

#[test]
fn error_codes_and_messages() {
    let mut p = ptr::null_mut();
    let missing = cstr(&fixture("nope/manifest.json"));
    assert_eq!(unsafe { hcg_dataset_load(missing.as_ptr(), &mut p) }, HcgStatus::Load);
    assert!(p.is_null());
    assert!(last_error().contains("nope"));

    assert_eq!(unsafe { hcg_dataset_load(ptr::null(), &mut p) }, HcgStatus::NullArgument);
    assert_eq!(last_error(), "manifest_path is NULL");

    let bad = [0xffu8, 0xfe, 0].as_ptr().cast::<c_char>();
    assert_eq!(unsafe { hcg_dataset_load(bad, &mut p) }, HcgStatus::InvalidUtf8);

    let mut t = ptr::null_mut();
    assert_eq!(unsafe { hcg_thresholds_new(0.7, 0, 0.1, &mut t) }, HcgStatus::InvalidArgument);
    assert!(t.is_null());
    let full = last_error();
    assert!(!full.is_empty());

    let mut small = [0x7f as c_char; 5];
    let n = unsafe { hcg_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, full.len() + 1);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap(), &full[..4]);

    // success clears the message
    let mut out = 0.0;
    let b = HcgBox { xmin: 0.0, ymin: 0.0, xmax: 1.0, ymax: 1.0 };
    assert_eq!(unsafe { hcg_iou(b, b, &mut out) }, HcgStatus::Ok);
    assert_eq!(last_error(), "");

    unsafe {
        hcg_dataset_free(ptr::null_mut());
        hcg_thresholds_free(ptr::null_mut());
    }
}

#[test]
fn iou_values_and_validation() {
    let a = HcgBox { xmin: 0.0, ymin: 0.0, xmax: 10.0, ymax: 10.0 };
    let b = HcgBox { xmin: 5.0, ymin: 0.0, xmax: 15.0, ymax: 10.0 };
    let mut out = f64::NAN;
    assert_eq!(unsafe { hcg_iou(a, b, &mut out) }, HcgStatus::Ok);
    assert_eq!(out, 50.0 / 150.0);
    let inverted = HcgBox { xmin: 3.0, ymin: 0.0, xmax: 1.0, ymax: 1.0 };
    assert_eq!(unsafe { hcg_iou(a, inverted, &mut out) }, HcgStatus::InvalidArgument);
    assert_eq!(unsafe { hcg_iou(a, b, ptr::null_mut()) }, HcgStatus::NullArgument);
}

#[test]
fn brenner_matches_committed_values() {
    for name in ["noise8", "wide16"] {
        let want: u128 = std::fs::read_to_string(fixture(&format!("pgm/{name}.brenner"))).unwrap().trim().parse().unwrap();
        let (mut hi, mut lo) = (u64::MAX, u64::MAX);
        let p = cstr(&fixture(&format!("pgm/{name}.pgm")));
        assert_eq!(unsafe { hcg_brenner_pgm(p.as_ptr(), &mut hi, &mut lo) }, HcgStatus::Ok);
        assert_eq!(((hi as u128) << 64) | lo as u128, want);
    }
}

#[test]
fn calibrate_and_discriminate_agree_with_library() {
    let lib_ds = generate_planted(&SynthConfig { image_count: 300, ..SynthConfig::planted() }, 2, 0.31).unwrap();
    let (_dir, m) = saved(&lib_ds);
    let lib_ds = Dataset::load(&m).unwrap();
    let want = calibrate_dataset(&lib_ds).unwrap();

    let ds = load(&m);
    let mut t = ptr::null_mut();
    let mut stats = HcgCalibrationStats::default();
    assert_eq!(unsafe { hcg_calibrate(ds.0, &mut t, &mut stats) }, HcgStatus::Ok, "{}", last_error());
    let t = Th(t);
    let (mut s, mut n, mut a) = (0.0, 0u32, 0.0);
    assert_eq!(unsafe { hcg_thresholds_get(t.0, &mut s, &mut n, &mut a) }, HcgStatus::Ok);
    assert_eq!((s, n, a), (want.thresholds.tau_s, want.thresholds.tau_n, want.thresholds.tau_a));
    assert_eq!(stats.accuracy, want.decision.accuracy);
    assert_eq!(stats.f1, want.decision.f1);
    assert_eq!(stats.noise_loss, want.noise.loss);

    let count = unsafe { hcg_dataset_image_count(ds.0) };
    let mut labels = vec![HcgCaseLabel::Easy; count];
    assert_eq!(unsafe { hcg_discriminate(ds.0, t.0, labels.as_mut_ptr(), count) }, HcgStatus::Ok);
    for (id, got) in lib_ds.image_ids().zip(&labels) {
        let want = hcg::discriminator::discriminate(&lib_ds.small[id], &want.thresholds);
        assert_eq!(*got == HcgCaseLabel::Difficult, want == CaseLabel::Difficult, "{id}");
    }
    assert_eq!(
        unsafe { hcg_discriminate(ds.0, t.0, labels.as_mut_ptr(), count - 1) },
        HcgStatus::InvalidArgument
    );
}

#[test]
fn thresholds_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("t.json");
    std::fs::write(&f, r#"{"tau_a":0.31,"tau_n":2,"tau_s":0.1}"#).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { hcg_thresholds_load(cstr(&f).as_ptr(), &mut t) }, HcgStatus::Ok);
    let t = Th(t);
    let (mut s, mut n, mut a) = (0.0, 0u32, 0.0);
    unsafe { hcg_thresholds_get(t.0, &mut s, &mut n, &mut a) };
    assert_eq!((s, n, a), (0.1, 2, 0.31));

    std::fs::write(&f, r#"{"tau_a":0.31,"tau_n":2,"tau_s":0.9}"#).unwrap();
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { hcg_thresholds_load(cstr(&f).as_ptr(), &mut bad) }, HcgStatus::Load);
}

#[test]
fn simulate_and_sweep_agree_with_library() {
    let lib_ds = generate(&SynthConfig { image_count: 120, ..SynthConfig::default() }).unwrap();
    let (_dir, m) = saved(&lib_ds);
    let lib_ds = Dataset::load(&m).unwrap();
    let ch = ChannelModel::default().for_dataset(&lib_ds);
    let ts = ThresholdSet::new(0.11, 0, 0.01).unwrap();
    let ds = load(&m);
    let t = thresholds(&ts);

    for (policy, routes) in [
        (HcgPolicy::EdgeOnly, uniform_routes(&lib_ds, Route::Edge)),
        (HcgPolicy::CloudOnly, uniform_routes(&lib_ds, Route::Cloud)),
        (HcgPolicy::Semantic, route_semantic(&lib_ds, &ts).unwrap()),
    ] {
        let want = simulate(&lib_ds, &routes, &ch, ApMode::AllPoint).unwrap();
        let mut got = HcgSimResult::default();
        assert_eq!(unsafe { hcg_simulate(ds.0, policy, t.0, HcgApMode::AllPoint, &mut got) }, HcgStatus::Ok);
        assert_eq!(got.map, want.metrics.map_value);
        assert_eq!(got.detected_objects, want.metrics.detected_objects);
        assert_eq!(got.difficult_count, want.metrics.difficult_count);
        assert_eq!(got.total_time_s, want.total_time_s);
        assert_eq!(got.uploaded_bytes, want.uploaded_bytes);
    }
    let mut got = HcgSimResult::default();
    let st = unsafe { hcg_simulate(ds.0, HcgPolicy::Semantic, ptr::null(), HcgApMode::AllPoint, &mut got) };
    assert_eq!(st, HcgStatus::NullArgument);

    let ratios = [0.0, 0.25, 0.5, 1.0];
    let scores = method_scores(&lib_ds, hcg::baselines::Method::Random, 7, None).unwrap();
    let want = sweep(&lib_ds, &scores, &ch, &ratios, ApMode::ElevenPoint).unwrap();
    let mut pts = [HcgSweepPoint::default(); 4];
    let st = unsafe {
        hcg_sweep(ds.0, HcgMethod::Random, 7, ptr::null(), ratios.as_ptr(), 4, HcgApMode::ElevenPoint, pts.as_mut_ptr())
    };
    assert_eq!(st, HcgStatus::Ok, "{}", last_error());
    for (g, w) in pts.iter().zip(&want) {
        assert_eq!((g.achieved_ratio, g.map, g.detected_objects, g.uploaded_bytes), (w.achieved_ratio, w.map_value, w.detected_objects, w.uploaded_bytes));
    }

    let descending = [0.5, 0.2];
    let st = unsafe {
        hcg_sweep(ds.0, HcgMethod::Top1, 0, ptr::null(), descending.as_ptr(), 2, HcgApMode::ElevenPoint, pts.as_mut_ptr())
    };
    assert_eq!(st, HcgStatus::Compute);
    let st = unsafe {
        hcg_sweep(ds.0, HcgMethod::Semantic, 0, ptr::null(), ratios.as_ptr(), 4, HcgApMode::ElevenPoint, pts.as_mut_ptr())
    };
    assert_eq!(st, HcgStatus::Compute, "semantic ranking needs thresholds");
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(hcg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
