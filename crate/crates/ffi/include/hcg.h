#ifndef HCG_H
#define HCG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HcgApMode {
  HCG_AP_MODE_ELEVEN_POINT = 0,
  HCG_AP_MODE_ALL_POINT = 1,
} HcgApMode;

typedef enum HcgCaseLabel {
  HCG_CASE_LABEL_EASY = 0,
  HCG_CASE_LABEL_DIFFICULT = 1,
} HcgCaseLabel;

typedef enum HcgMethod {
  HCG_METHOD_RANDOM = 0,
  HCG_METHOD_BRENNER = 1,
  HCG_METHOD_TOP1 = 2,
  HCG_METHOD_SEMANTIC = 3,
} HcgMethod;

typedef enum HcgPolicy {
  HCG_POLICY_EDGE_ONLY = 0,
  HCG_POLICY_CLOUD_ONLY = 1,
  HCG_POLICY_SEMANTIC = 2,
} HcgPolicy;

// Result code of every fallible call.
typedef enum HcgStatus {
  HCG_STATUS_OK = 0,
  // A required pointer argument was `NULL`.
  HCG_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  HCG_STATUS_INVALID_UTF8 = 2,
  // An argument value was out of its domain.
  HCG_STATUS_INVALID_ARGUMENT = 3,
  // Reading or parsing input files failed.
  HCG_STATUS_LOAD = 4,
  // The computation rejected its inputs.
  HCG_STATUS_COMPUTE = 5,
  // The caller's buffer is too small; the needed size was reported.
  HCG_STATUS_BUFFER_TOO_SMALL = 6,
  // An internal panic was caught at the boundary.
  HCG_STATUS_PANIC = 7,
} HcgStatus;

// Loaded dataset (manifest, traces, truths, optional images).
typedef struct HcgDataset HcgDataset;

// Validated discriminator thresholds.
typedef struct HcgThresholds HcgThresholds;

typedef struct HcgCalibrationStats {
  // Signed count error of the chosen noise threshold.
  int64_t noise_loss;
  double accuracy;
  double precision;
  double recall;
  double f1;
} HcgCalibrationStats;

// Axis-aligned box in pixel coordinates.
typedef struct HcgBox {
  double xmin;
  double ymin;
  double xmax;
  double ymax;
} HcgBox;

typedef struct HcgSimResult {
  double map;
  uint64_t detected_objects;
  double upload_ratio;
  uint64_t image_count;
  uint64_t difficult_count;
  double total_time_s;
  uint64_t uploaded_bytes;
} HcgSimResult;

typedef struct HcgSweepPoint {
  double target_ratio;
  double achieved_ratio;
  double map;
  uint64_t detected_objects;
  double total_time_s;
  uint64_t uploaded_bytes;
} HcgSweepPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message (empty after a success)
// into `buf`, truncating if needed. Always NUL-terminates when `cap > 0`.
// Returns the full message length plus one.
//
// # Safety
// `buf` must be `NULL` or point to `cap` writable bytes.
size_t hcg_last_error_message(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *hcg_version(void);

// Loads the dataset described by a manifest file.
//
// # Safety
// `manifest_path` must be a NUL-terminated string; `out` must be writable.
enum HcgStatus hcg_dataset_load(const char *manifest_path, struct HcgDataset **out);

// # Safety
// `ds` must be `NULL` or a handle from [`hcg_dataset_load`] not yet freed.
void hcg_dataset_free(struct HcgDataset *ds);

// Number of images, or 0 for `NULL`.
//
// # Safety
// `ds` must be `NULL` or a live dataset handle.
size_t hcg_dataset_image_count(const struct HcgDataset *ds);

// Writes the id of image `index` into `buf`. `needed` (optional) receives
// the byte size including the NUL, also when the buffer is too small.
//
// # Safety
// `ds` must be a live dataset handle; `buf` must be `NULL` or point to
// `cap` writable bytes; `needed` must be `NULL` or writable.
enum HcgStatus hcg_dataset_image_id(const struct HcgDataset *ds,
                                    size_t index,
                                    char *buf,
                                    size_t cap,
                                    size_t *needed);

// Validates and wraps a threshold triple.
//
// # Safety
// `out` must be writable.
enum HcgStatus hcg_thresholds_new(double tau_s,
                                  uint32_t tau_n,
                                  double tau_a,
                                  struct HcgThresholds **out);

// Reads a `{"tau_s":..,"tau_n":..,"tau_a":..}` JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HcgStatus hcg_thresholds_load(const char *path, struct HcgThresholds **out);

// # Safety
// `t` must be a live thresholds handle; each output must be `NULL` or writable.
enum HcgStatus hcg_thresholds_get(const struct HcgThresholds *t,
                                  double *tau_s,
                                  uint32_t *tau_n,
                                  double *tau_a);

// # Safety
// `t` must be `NULL` or a thresholds handle not yet freed.
void hcg_thresholds_free(struct HcgThresholds *t);

// Calibrates all three thresholds on the dataset. Labels come from the
// manifest, or from the small and big traces. `stats` is optional.
//
// # Safety
// `ds` must be a live dataset handle; `out` writable; `stats` `NULL` or writable.
enum HcgStatus hcg_calibrate(const struct HcgDataset *ds,
                             struct HcgThresholds **out,
                             struct HcgCalibrationStats *stats);

// Labels every image from its small-model trace. `labels` must hold
// exactly [`hcg_dataset_image_count`] entries.
//
// # Safety
// Handles must be live; `labels` must point to `len` writable entries.
enum HcgStatus hcg_discriminate(const struct HcgDataset *ds,
                                const struct HcgThresholds *t,
                                enum HcgCaseLabel *labels,
                                size_t len);

// Intersection over union of two boxes.
//
// # Safety
// `out` must be writable.
enum HcgStatus hcg_iou(struct HcgBox a, struct HcgBox b, double *out);

// Brenner sharpness of a PGM image as an unsigned 128-bit value split
// into high and low 64-bit halves.
//
// # Safety
// `path` must be a NUL-terminated string; `hi` and `lo` writable.
enum HcgStatus hcg_brenner_pgm(const char *path, uint64_t *hi, uint64_t *lo);

// Simulates one routing policy under the default channel model (per-image
// sizes from the manifest when present). `t` is required for the semantic
// policy and ignored otherwise.
//
// # Safety
// `ds` must be a live handle, `t` `NULL` or live, `out` writable.
enum HcgStatus hcg_simulate(const struct HcgDataset *ds,
                            enum HcgPolicy policy,
                            const struct HcgThresholds *t,
                            enum HcgApMode mode,
                            struct HcgSimResult *out);

// Upload-ratio sweep ranking images by `method`. `ratios` must be
// non-decreasing values in [0, 1]; `out` receives one point per ratio.
// `seed` is used by the random method, `t` by the semantic one.
//
// # Safety
// `ds` live, `t` `NULL` or live, `ratios` and `out` valid for `n` entries.
enum HcgStatus hcg_sweep(const struct HcgDataset *ds,
                         enum HcgMethod method,
                         uint64_t seed,
                         const struct HcgThresholds *t,
                         const double *ratios,
                         size_t n,
                         enum HcgApMode mode,
                         struct HcgSweepPoint *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HCG_H */
