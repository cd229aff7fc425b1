//! C ABI over `hcg`.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`HcgStatus`]; on failure the
//!   message is kept per thread and read with [`hcg_last_error_message`].
//! * Objects are opaque handles created by `*_load` / `*_new` and released
//!   with the matching `*_free`. Freeing `NULL` is a no-op.
//! * Outputs are written through caller-provided pointers only on success,
//!   except size hints reported alongside [`HcgStatus::BufferTooSmall`].
//! * Per-image arrays follow image-id (byte-wise) order, the same order as
//!   [`hcg_dataset_image_id`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hcg::baselines::{brenner, Method};
use hcg::detect::{iou, BBox};
use hcg::eval::calibrate_dataset;
use hcg::ingest::{load_pgm, Dataset};
use hcg::sim::{method_scores, route_semantic, simulate, sweep, uniform_routes, ChannelModel, SimulationReport};
use hcg::{discriminator, ApMode, CaseLabel, Route, ThresholdSet};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcgStatus {
    Ok = 0,
    /// A required pointer argument was `NULL`.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument value was out of its domain.
    InvalidArgument = 3,
    /// Reading or parsing input files failed.
    Load = 4,
    /// The computation rejected its inputs.
    Compute = 5,
    /// The caller's buffer is too small; the needed size was reported.
    BufferTooSmall = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcgCaseLabel {
    Easy = 0,
    Difficult = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcgApMode {
    ElevenPoint = 0,
    AllPoint = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcgPolicy {
    EdgeOnly = 0,
    CloudOnly = 1,
    Semantic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcgMethod {
    Random = 0,
    Brenner = 1,
    Top1 = 2,
    Semantic = 3,
}

/// Axis-aligned box in pixel coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcgBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcgCalibrationStats {
    /// Signed count error of the chosen noise threshold.
    pub noise_loss: i64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcgSimResult {
    pub map: f64,
    pub detected_objects: u64,
    pub upload_ratio: f64,
    pub image_count: u64,
    pub difficult_count: u64,
    pub total_time_s: f64,
    pub uploaded_bytes: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcgSweepPoint {
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    pub map: f64,
    pub detected_objects: u64,
    pub total_time_s: f64,
    pub uploaded_bytes: u64,
}

/// Loaded dataset (manifest, traces, truths, optional images).
pub struct HcgDataset {
    inner: Dataset,
    ids: Vec<String>,
}

/// Validated discriminator thresholds.
pub struct HcgThresholds {
    inner: ThresholdSet,
}

struct Failure {
    status: HcgStatus,
    message: String,
}

impl Failure {
    fn new(status: HcgStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn null(what: &str) -> Self {
        Self::new(HcgStatus::NullArgument, format!("{what} is NULL"))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            HcgStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(e.message);
            e.status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            HcgStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|e| Failure::new(HcgStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn load_err(e: impl std::fmt::Display) -> Failure {
    Failure::new(HcgStatus::Load, e.to_string())
}

fn compute_err(e: impl std::fmt::Display) -> Failure {
    Failure::new(HcgStatus::Compute, e.to_string())
}

fn ap_mode(m: HcgApMode) -> ApMode {
    match m {
        HcgApMode::ElevenPoint => ApMode::ElevenPoint,
        HcgApMode::AllPoint => ApMode::AllPoint,
    }
}

fn channel(ds: &Dataset) -> ChannelModel {
    ChannelModel::default().for_dataset(ds)
}

/// Copies `s` plus a NUL into `buf`, reporting the size needed in `needed`.
unsafe fn write_c_string(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Failure> {
    let n = s.len() + 1;
    if let Some(w) = needed.as_mut() {
        *w = n;
    }
    if buf.is_null() || cap < n {
        return Err(Failure::new(HcgStatus::BufferTooSmall, format!("need {n} bytes, have {cap}")));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message (empty after a success)
/// into `buf`, truncating if needed. Always NUL-terminates when `cap > 0`.
/// Returns the full message length plus one.
///
/// # Safety
/// `buf` must be `NULL` or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hcg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let k = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), k);
            *buf.add(k) = 0;
        }
        msg.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the dataset described by a manifest file.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_dataset_load(manifest_path: *const c_char, out: *mut *mut HcgDataset) -> HcgStatus {
    guard(|| {
        let path = path_arg(manifest_path, "manifest_path")?;
        let out = out_ref(out, "out")?;
        let inner = Dataset::load(path).map_err(load_err)?;
        let ids = inner.image_ids().cloned().collect();
        *out = Box::into_raw(Box::new(HcgDataset { inner, ids }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be `NULL` or a handle from [`hcg_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hcg_dataset_free(ds: *mut HcgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of images, or 0 for `NULL`.
///
/// # Safety
/// `ds` must be `NULL` or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hcg_dataset_image_count(ds: *const HcgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.ids.len())
}

/// Writes the id of image `index` into `buf`. `needed` (optional) receives
/// the byte size including the NUL, also when the buffer is too small.
///
/// # Safety
/// `ds` must be a live dataset handle; `buf` must be `NULL` or point to
/// `cap` writable bytes; `needed` must be `NULL` or writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_dataset_image_id(
    ds: *const HcgDataset,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> HcgStatus {
    guard(|| {
        let ds = borrow(ds, "ds")?;
        let id = ds.ids.get(index).ok_or_else(|| {
            Failure::new(HcgStatus::InvalidArgument, format!("index {index} out of range (0..{})", ds.ids.len()))
        })?;
        write_c_string(id, buf, cap, needed)
    })
}

/// Validates and wraps a threshold triple.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_thresholds_new(
    tau_s: f64,
    tau_n: u32,
    tau_a: f64,
    out: *mut *mut HcgThresholds,
) -> HcgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = ThresholdSet::new(tau_s, tau_n, tau_a)
            .map_err(|e| Failure::new(HcgStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(HcgThresholds { inner }));
        Ok(())
    })
}

/// Reads a `{"tau_s":..,"tau_n":..,"tau_a":..}` JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_thresholds_load(path: *const c_char, out: *mut *mut HcgThresholds) -> HcgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ref(out, "out")?;
        let text = std::fs::read_to_string(path).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
        let inner: ThresholdSet =
            serde_json::from_str(&text).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
        *out = Box::into_raw(Box::new(HcgThresholds { inner }));
        Ok(())
    })
}

/// # Safety
/// `t` must be a live thresholds handle; each output must be `NULL` or writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_thresholds_get(
    t: *const HcgThresholds,
    tau_s: *mut f64,
    tau_n: *mut u32,
    tau_a: *mut f64,
) -> HcgStatus {
    guard(|| {
        let t = &borrow(t, "t")?.inner;
        if let Some(p) = tau_s.as_mut() {
            *p = t.tau_s;
        }
        if let Some(p) = tau_n.as_mut() {
            *p = t.tau_n;
        }
        if let Some(p) = tau_a.as_mut() {
            *p = t.tau_a;
        }
        Ok(())
    })
}

/// # Safety
/// `t` must be `NULL` or a thresholds handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hcg_thresholds_free(t: *mut HcgThresholds) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Calibrates all three thresholds on the dataset. Labels come from the
/// manifest, or from the small and big traces. `stats` is optional.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` writable; `stats` `NULL` or writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_calibrate(
    ds: *const HcgDataset,
    out: *mut *mut HcgThresholds,
    stats: *mut HcgCalibrationStats,
) -> HcgStatus {
    guard(|| {
        let ds = borrow(ds, "ds")?;
        let out = out_ref(out, "out")?;
        let c = calibrate_dataset(&ds.inner).map_err(compute_err)?;
        if let Some(s) = stats.as_mut() {
            *s = HcgCalibrationStats {
                noise_loss: c.noise.loss,
                accuracy: c.decision.accuracy,
                precision: c.decision.precision,
                recall: c.decision.recall,
                f1: c.decision.f1,
            };
        }
        *out = Box::into_raw(Box::new(HcgThresholds { inner: c.thresholds }));
        Ok(())
    })
}

/// Labels every image from its small-model trace. `labels` must hold
/// exactly [`hcg_dataset_image_count`] entries.
///
/// # Safety
/// Handles must be live; `labels` must point to `len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn hcg_discriminate(
    ds: *const HcgDataset,
    t: *const HcgThresholds,
    labels: *mut HcgCaseLabel,
    len: usize,
) -> HcgStatus {
    guard(|| {
        let ds = borrow(ds, "ds")?;
        let t = &borrow(t, "t")?.inner;
        if labels.is_null() {
            return Err(Failure::null("labels"));
        }
        if len != ds.ids.len() {
            return Err(Failure::new(
                HcgStatus::InvalidArgument,
                format!("labels holds {len} entries, dataset has {}", ds.ids.len()),
            ));
        }
        let computed = ds
            .ids
            .iter()
            .map(|id| {
                let rec = ds.inner.small.get(id).ok_or_else(|| compute_err(format!("no small-model trace for {id:?}")))?;
                Ok(match discriminator::discriminate(rec, t) {
                    CaseLabel::Easy => HcgCaseLabel::Easy,
                    CaseLabel::Difficult => HcgCaseLabel::Difficult,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        ptr::copy_nonoverlapping(computed.as_ptr(), labels, len);
        Ok(())
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_iou(a: HcgBox, b: HcgBox, out: *mut f64) -> HcgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mk = |x: HcgBox| {
            BBox::new(x.xmin, x.ymin, x.xmax, x.ymax).map_err(|e| Failure::new(HcgStatus::InvalidArgument, e.to_string()))
        };
        *out = iou(&mk(a)?, &mk(b)?);
        Ok(())
    })
}

/// Brenner sharpness of a PGM image as an unsigned 128-bit value split
/// into high and low 64-bit halves.
///
/// # Safety
/// `path` must be a NUL-terminated string; `hi` and `lo` writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_brenner_pgm(path: *const c_char, hi: *mut u64, lo: *mut u64) -> HcgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let hi = out_ref(hi, "hi")?;
        let lo = out_ref(lo, "lo")?;
        let img = load_pgm(path).map_err(load_err)?;
        let v = brenner(&img).map_err(compute_err)?;
        *hi = (v >> 64) as u64;
        *lo = v as u64;
        Ok(())
    })
}

fn sim_result(r: &SimulationReport) -> HcgSimResult {
    HcgSimResult {
        map: r.metrics.map_value,
        detected_objects: r.metrics.detected_objects,
        upload_ratio: r.metrics.upload_ratio,
        image_count: r.metrics.image_count,
        difficult_count: r.metrics.difficult_count,
        total_time_s: r.total_time_s,
        uploaded_bytes: r.uploaded_bytes,
    }
}

/// Simulates one routing policy under the default channel model (per-image
/// sizes from the manifest when present). `t` is required for the semantic
/// policy and ignored otherwise.
///
/// # Safety
/// `ds` must be a live handle, `t` `NULL` or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hcg_simulate(
    ds: *const HcgDataset,
    policy: HcgPolicy,
    t: *const HcgThresholds,
    mode: HcgApMode,
    out: *mut HcgSimResult,
) -> HcgStatus {
    guard(|| {
        let ds = &borrow(ds, "ds")?.inner;
        let out = out_ref(out, "out")?;
        let routes = match policy {
            HcgPolicy::EdgeOnly => uniform_routes(ds, Route::Edge),
            HcgPolicy::CloudOnly => uniform_routes(ds, Route::Cloud),
            HcgPolicy::Semantic => route_semantic(ds, &borrow(t, "t")?.inner).map_err(compute_err)?,
        };
        let r = simulate(ds, &routes, &channel(ds), ap_mode(mode)).map_err(compute_err)?;
        *out = sim_result(&r);
        Ok(())
    })
}

/// Upload-ratio sweep ranking images by `method`. `ratios` must be
/// non-decreasing values in [0, 1]; `out` receives one point per ratio.
/// `seed` is used by the random method, `t` by the semantic one.
///
/// # Safety
/// `ds` live, `t` `NULL` or live, `ratios` and `out` valid for `n` entries.
#[no_mangle]
pub unsafe extern "C" fn hcg_sweep(
    ds: *const HcgDataset,
    method: HcgMethod,
    seed: u64,
    t: *const HcgThresholds,
    ratios: *const f64,
    n: usize,
    mode: HcgApMode,
    out: *mut HcgSweepPoint,
) -> HcgStatus {
    guard(|| {
        let ds = &borrow(ds, "ds")?.inner;
        if n > 0 && (ratios.is_null() || out.is_null()) {
            return Err(Failure::null(if ratios.is_null() { "ratios" } else { "out" }));
        }
        let ratios: &[f64] = if n == 0 { &[] } else { std::slice::from_raw_parts(ratios, n) };
        let method = match method {
            HcgMethod::Random => Method::Random,
            HcgMethod::Brenner => Method::Brenner,
            HcgMethod::Top1 => Method::Top1Confidence,
            HcgMethod::Semantic => Method::Semantic,
        };
        let t = t.as_ref().map(|t| &t.inner);
        let scores = method_scores(ds, method, seed, t).map_err(compute_err)?;
        let points = sweep(ds, &scores, &channel(ds), ratios, ap_mode(mode)).map_err(compute_err)?;
        for (i, p) in points.iter().enumerate() {
            *out.add(i) = HcgSweepPoint {
                target_ratio: p.target_ratio,
                achieved_ratio: p.achieved_ratio,
                map: p.map_value,
                detected_objects: p.detected_objects,
                total_time_s: p.total_time_s,
                uploaded_bytes: p.uploaded_bytes,
            };
        }
        Ok(())
    })
}
