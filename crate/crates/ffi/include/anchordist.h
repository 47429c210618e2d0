#ifndef ANCHORDIST_H
#define ANCHORDIST_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum AdStatus {
  AD_STATUS_OK = 0,
  AD_STATUS_NULL_POINTER = 1,
  AD_STATUS_INVALID_ARGUMENT = 2,
  AD_STATUS_IO = 3,
  AD_STATUS_PARSE = 4,
  AD_STATUS_DEGENERATE = 5,
  AD_STATUS_DIVERGED = 6,
  AD_STATUS_PREDICTOR = 7,
  AD_STATUS_PANIC = 8,
} AdStatus;

typedef enum AdStrategy {
  AD_STRATEGY_FPS = 0,
  /**
   * `param` is the curvature threshold.
   */
  AD_STRATEGY_CLUSTER = 1,
  /**
   * `param` is the ball radius.
   */
  AD_STRATEGY_BALL_QUERY = 2,
} AdStrategy;

typedef struct AdAnchors AdAnchors;

typedef struct AdCloud AdCloud;

typedef struct AdMatrix AdMatrix;

/**
 * Levenberg-Marquardt settings for [`ad_decode`].
 */
typedef struct AdSolverOptions {
  size_t max_iters;
  double residual_tol;
  double damping_init;
  double damping_scale;
  bool reflection_restarts;
} AdSolverOptions;

/**
 * Settings for [`ad_complete`]. `predictor` is a path to an external
 * executable, or NULL for the identity predictor.
 */
typedef struct AdCompletionOptions {
  size_t k;
  size_t n_in;
  size_t m_out;
  enum AdStrategy strategy;
  double strategy_param;
  bool normalize;
  const char *predictor;
  double timeout_seconds;
} AdCompletionOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *ad_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ad_version(void);

/**
 * Builds a cloud from `n` packed xyz triples.
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles and `out` must be writable.
 */
enum AdStatus ad_cloud_new(const double *xyz, size_t n, struct AdCloud **out);

/**
 * Loads an XYZ or PLY file, picked by extension.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum AdStatus ad_cloud_load(const char *path, struct AdCloud **out);

/**
 * # Safety
 * `cloud` must be a live handle and `path` a NUL-terminated string.
 */
enum AdStatus ad_cloud_save(const struct AdCloud *cloud, const char *path);

/**
 * Number of points, 0 for NULL.
 *
 * # Safety
 * `cloud` must be NULL or a live handle.
 */
size_t ad_cloud_len(const struct AdCloud *cloud);

/**
 * Copies the points as packed xyz triples into `out`, which holds
 * `capacity` points.
 *
 * # Safety
 * `cloud` must be a live handle and `out` must hold `3 * capacity` doubles.
 */
enum AdStatus ad_cloud_points(const struct AdCloud *cloud, double *out, size_t capacity);

/**
 * # Safety
 * `cloud` must be NULL or a handle not freed before.
 */
void ad_cloud_free(struct AdCloud *cloud);

/**
 * Picks `k` anchors. `param` is ignored for FPS; NaN selects the default
 * radius or threshold.
 *
 * # Safety
 * `cloud` must be a live handle and `out` must be writable.
 */
enum AdStatus ad_select_anchors(const struct AdCloud *cloud,
                                size_t k,
                                enum AdStrategy strategy,
                                double param,
                                struct AdAnchors **out);

/**
 * # Safety
 * `anchors` must be NULL or a live handle.
 */
size_t ad_anchors_len(const struct AdAnchors *anchors);

/**
 * # Safety
 * `anchors` must be a live handle and `out` must hold `3 * capacity` doubles.
 */
enum AdStatus ad_anchors_points(const struct AdAnchors *anchors, double *out, size_t capacity);

/**
 * Index of each anchor in the source cloud.
 *
 * # Safety
 * `anchors` must be a live handle and `out` must hold `capacity` values.
 */
enum AdStatus ad_anchors_indices(const struct AdAnchors *anchors, size_t *out, size_t capacity);

/**
 * Smallest tie-breaking gap seen during selection. A tiny margin means a
 * rotated copy of the cloud may select different anchors.
 *
 * # Safety
 * `anchors` must be a live handle and `margin`/`safe` writable or NULL.
 */
enum AdStatus ad_anchors_margin(const struct AdAnchors *anchors, double *margin, bool *safe);

/**
 * # Safety
 * `anchors` must be NULL or a handle not freed before.
 */
void ad_anchors_free(struct AdAnchors *anchors);

/**
 * Distance matrix of `cloud` against the anchor set.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum AdStatus ad_encode(const struct AdCloud *cloud,
                        const struct AdAnchors *anchors,
                        struct AdMatrix **out);

/**
 * Wraps a row-major `rows × k` distance array with its `k` anchors.
 *
 * # Safety
 * `values` must hold `rows * k` doubles, `anchors_xyz` `3 * k` doubles, and
 * `out` must be writable.
 */
enum AdStatus ad_matrix_new(const double *values,
                            size_t rows,
                            const double *anchors_xyz,
                            size_t k,
                            struct AdMatrix **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AdStatus ad_matrix_read(const char *path, struct AdMatrix **out);

/**
 * # Safety
 * `matrix` must be a live handle and `path` a NUL-terminated string.
 */
enum AdStatus ad_matrix_write(const struct AdMatrix *matrix, const char *path);

/**
 * # Safety
 * `matrix` must be NULL or a live handle.
 */
size_t ad_matrix_rows(const struct AdMatrix *matrix);

/**
 * # Safety
 * `matrix` must be NULL or a live handle.
 */
size_t ad_matrix_cols(const struct AdMatrix *matrix);

/**
 * Copies the row-major values into `out`, which holds `capacity` doubles.
 *
 * # Safety
 * `matrix` must be a live handle and `out` must hold `capacity` doubles.
 */
enum AdStatus ad_matrix_values(const struct AdMatrix *matrix, double *out, size_t capacity);

/**
 * # Safety
 * `matrix` must be NULL or a handle not freed before.
 */
void ad_matrix_free(struct AdMatrix *matrix);

struct AdSolverOptions ad_solver_options_default(void);

/**
 * Reconstructs one point per matrix row. `opts` may be NULL for defaults.
 *
 * Rows that fail to converge still produce a point; they are counted in
 * `failures`. `max_residual` and `failures` may be NULL.
 *
 * # Safety
 * `matrix` must be a live handle, `opts` NULL or valid, `out` writable.
 */
enum AdStatus ad_decode(const struct AdMatrix *matrix,
                        const struct AdSolverOptions *opts,
                        struct AdCloud **out,
                        double *max_residual,
                        size_t *failures);

/**
 * Symmetric chamfer distance between two matrices' rows.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum AdStatus ad_dmcd(const struct AdMatrix *a, const struct AdMatrix *b, double *out);

/**
 * Chamfer-L1, scaled by 1000.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum AdStatus ad_chamfer_l1(const struct AdCloud *a, const struct AdCloud *b, double *out);

/**
 * Chamfer-L2 (squared distances), scaled by 1000.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum AdStatus ad_chamfer_l2(const struct AdCloud *a, const struct AdCloud *b, double *out);

/**
 * One-way squared distance from `input` to `output`, scaled by 1000.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum AdStatus ad_fidelity(const struct AdCloud *input, const struct AdCloud *output, double *out);

struct AdCompletionOptions ad_completion_options_default(void);

/**
 * Runs the full pipeline on a partial cloud. `opts` may be NULL for
 * defaults; `max_residual` may be NULL.
 *
 * # Safety
 * `partial` must be a live handle, `opts` NULL or valid with `predictor`
 * NULL or NUL-terminated, and `out` writable.
 */
enum AdStatus ad_complete(const struct AdCloud *partial,
                          const struct AdCompletionOptions *opts,
                          uint64_t seed,
                          struct AdCloud **out,
                          double *max_residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANCHORDIST_H */
