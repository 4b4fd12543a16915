#ifndef CSKR_H
#define CSKR_H

/* This file is generated by cbindgen from cskr-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Generator selector for [`cskr_generate`].
 */
#define CSKR_MODE_PRIOR 0

#define CSKR_MODE_V1 1

#define CSKR_MODE_V2 2

#define CSKR_MODE_V3 3

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  CSKR_STATUS_OK = 0,
  /**
   * A configuration value violates its invariants.
   */
  CSKR_STATUS_CONFIG = 1,
  /**
   * An argument lies outside the mathematical domain of the operation.
   */
  CSKR_STATUS_DOMAIN = 2,
  /**
   * Shapes or dimensions do not line up.
   */
  CSKR_STATUS_DIMENSION = 3,
  /**
   * A non-finite value was produced or received.
   */
  CSKR_STATUS_NUMERIC = 4,
  /**
   * The call violates an operation's contract.
   */
  CSKR_STATUS_USAGE = 5,
  /**
   * A checkpoint file is malformed.
   */
  CSKR_STATUS_FORMAT = 6,
  /**
   * The checkpoint does not match the requested mode.
   */
  CSKR_STATUS_MISMATCH = 7,
  /**
   * The file could not be read.
   */
  CSKR_STATUS_IO = 8,
  /**
   * A required pointer was null.
   */
  CSKR_STATUS_NULL_POINTER = 9,
  /**
   * The callee panicked; state may be inconsistent.
   */
  CSKR_STATUS_PANIC = 10,
} CskrStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct CskrModel CskrModel;

/**
 * Opaque handle to a trajectory discretization and its parameters.
 */
typedef struct CskrSchedule CskrSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *cskr_version(void);

/**
 * Static description of a status code; do not free.
 */
const char *cskr_status_message(CskrStatus status);

/**
 * Build a schedule handle. On success writes a pointer that must be
 * released with [`cskr_schedule_free`].
 *
 * # Safety
 * `out` must be a valid pointer to pointer-sized writable memory.
 */
CskrStatus cskr_schedule_new(double epsilon,
                             double t_max,
                             double rho,
                             uint32_t points,
                             double sigma_data,
                             CskrSchedule **out);

/**
 * Release a schedule handle. Null is a no-op.
 *
 * # Safety
 * `schedule` must be null or a pointer previously returned by
 * [`cskr_schedule_new`] that has not been freed.
 */
void cskr_schedule_free(CskrSchedule *schedule);

/**
 * Number of trajectory points N.
 *
 * # Safety
 * `schedule` must be a live handle from [`cskr_schedule_new`].
 */
uint32_t cskr_schedule_points(const CskrSchedule *schedule);

/**
 * Level t_n for a 1-based index n in 1..=N.
 *
 * # Safety
 * `schedule` must be a live handle; `out` must point to writable f64.
 */
CskrStatus cskr_schedule_level(const CskrSchedule *schedule, uint32_t n, double *out);

/**
 * Skip-connection coefficients at time level t.
 *
 * # Safety
 * `schedule` must be a live handle; `c_skip` and `c_out` must point to
 * writable f64 slots.
 */
CskrStatus cskr_skip_coefficients(const CskrSchedule *schedule,
                                  double t,
                                  double *c_skip,
                                  double *c_out);

/**
 * Sinusoidal time embedding of t into a caller-allocated buffer of `dim`
 * doubles (dim must be even).
 *
 * # Safety
 * `out` must point to at least `dim` writable doubles.
 */
CskrStatus cskr_time_embed(double t, uint32_t dim, double *out);

/**
 * KL divergence between N(x, t²I) and N(x_tilde, t²I) over `len` entries.
 *
 * # Safety
 * `x` and `x_tilde` must point to `len` readable doubles; `out` to one
 * writable double.
 */
CskrStatus cskr_kl_noised(const double *x,
                          const double *x_tilde,
                          uintptr_t len,
                          double t,
                          double *out);

/**
 * Fréchet distance between Gaussians fitted to two feature sets, given as
 * row-major `rows × dim` matrices with at least two rows each.
 *
 * # Safety
 * `features_a` and `features_b` must point to `rows_a * dim` and
 * `rows_b * dim` readable doubles; `out` to one writable double.
 */
CskrStatus cskr_frechet_gaussian_distance(const double *features_a,
                                          uintptr_t rows_a,
                                          const double *features_b,
                                          uintptr_t rows_b,
                                          uintptr_t dim,
                                          double *out);

/**
 * Feature embedding of a batch of patches with a seed-derived projector:
 * writes `count × (d_f + 2)` doubles.
 *
 * # Safety
 * `patches` must point to `count * rows * cols` readable doubles; `out`
 * must point to `count * (d_f + 2)` writable doubles.
 */
CskrStatus cskr_extract_features(const double *patches,
                                 uintptr_t count,
                                 uint32_t rows,
                                 uint32_t cols,
                                 uint32_t d_f,
                                 uint64_t seed,
                                 double *out);

/**
 * Load a checkpoint file. On success writes a handle that must be
 * released with [`cskr_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must point to
 * pointer-sized writable memory.
 */
CskrStatus cskr_model_load(const char *path, CskrModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a live handle from [`cskr_model_load`].
 */
void cskr_model_free(CskrModel *model);

/**
 * # Safety
 * `model` must be a live handle from [`cskr_model_load`].
 */
uint32_t cskr_model_patch_rows(const CskrModel *model);

/**
 * # Safety
 * `model` must be a live handle from [`cskr_model_load`].
 */
uint32_t cskr_model_patch_cols(const CskrModel *model);

/**
 * # Safety
 * `model` must be a live handle from [`cskr_model_load`].
 */
uint32_t cskr_model_cond_dim(const CskrModel *model);

/**
 * Trained generator version: 1, 2 or 3, or -1 for a prior-only checkpoint.
 *
 * # Safety
 * `model` must be a live handle from [`cskr_model_load`].
 */
int32_t cskr_model_mode(const CskrModel *model);

/**
 * Restore bridge index k, or 0 when the checkpoint has none.
 *
 * # Safety
 * `model` must be a live handle from [`cskr_model_load`].
 */
uint32_t cskr_model_bridge_k(const CskrModel *model);

/**
 * Scorer-selected restore index op, or 0 when the checkpoint has none.
 *
 * # Safety
 * `model` must be a live handle from [`cskr_model_load`].
 */
uint32_t cskr_model_op(const CskrModel *model);

/**
 * One-step generation. `conds` is row-major `count × cond_dim`; `out`
 * receives `count × rows × cols` doubles. `mode` is one of the
 * `CSKR_MODE_*` constants; the schedule must match the one the model was
 * trained with.
 *
 * # Safety
 * `model` and `schedule` must be live handles; `conds` must point to
 * `count * cond_dim` readable doubles and `out` to
 * `count * rows * cols` writable doubles.
 */
CskrStatus cskr_generate(const CskrModel *model,
                         const CskrSchedule *schedule,
                         uint32_t mode,
                         const double *conds,
                         uintptr_t count,
                         uint64_t seed,
                         double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CSKR_H */
