/* C interface for the stgp streaming spatio-temporal GP estimator. */

#ifndef STGP_H
#define STGP_H

/* Generated by cbindgen from the stgp-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// ABI revision reported by [`stgp_abi_version`]; bumped on any breaking
// change to this header.
#define STGP_ABI_VERSION 1

// Status code returned by every fallible call.
typedef enum StgpStatus {
  // The call succeeded.
  STGP_STATUS_OK = 0,
  // A required pointer argument was null.
  STGP_STATUS_NULL_POINTER = 1,
  // Arguments were structurally invalid (bad JSON, wrong lengths,
  // out-of-range indices, non-finite numbers, ...).
  STGP_STATUS_INVALID_ARGUMENT = 2,
  // The computation failed numerically (loss of positive definiteness,
  // unstable realization, approximation failure).
  STGP_STATUS_NUMERICAL_FAILURE = 3,
  // An unexpected internal failure; the process state is still sound.
  STGP_STATUS_INTERNAL_ERROR = 4,
} StgpStatus;

// Streaming estimator with an adaptive location set (opaque).
typedef struct StgpAdaptive StgpAdaptive;

// Streaming estimator state (opaque).
typedef struct StgpFilter StgpFilter;

// Joint space-time model over a fixed location set (opaque).
typedef struct StgpModel StgpModel;

// Prediction weights for a fixed set of off-grid points (opaque).
typedef struct StgpQuery StgpQuery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the ABI revision of this library.
uint32_t stgp_abi_version(void);

// Returns the error message of the most recent failing call on this
// thread, as a NUL-terminated UTF-8 string.
//
// The pointer stays valid until the next failing call on the same thread;
// it must not be freed. Returns an empty string if no error occurred yet.
const char *stgp_last_error_message(void);

// Creates a model from a JSON specification.
//
// The document must be a JSON object with:
//
// - `"kernel"`: `{"spatial": {...}, "temporal": {...}}` kernel description,
// - `"points"`: array of equal-length coordinate arrays (the location set),
// - `"realization"` (optional): `{"kind": "exact"}` (default) or
//   `{"kind": "approximate", "order": r, "grid_points": n}` for kernels
//   without an exact finite-order representation,
// - `"root_method"` (optional): spatial factor method, default
//   `"symmetric_eigen"`,
// - `"seed"` (optional): seed for the approximation fit, default 0.
//
// On success writes a handle to `out_model`; release it with
// [`stgp_model_free`].
//
// # Safety
// `spec_json` must point to a valid NUL-terminated string and `out_model`
// to writable space for one pointer; both stay borrowed only for the call.
enum StgpStatus stgp_model_create_json(const char *spec_json, struct StgpModel **out_model);

// Releases a model handle. Passing null is a no-op.
//
// # Safety
// `model` must be a pointer returned by [`stgp_model_create_json`] that has
// not been freed yet, or null.
void stgp_model_free(struct StgpModel *model);

// Number of locations in the model's set, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle from [`stgp_model_create_json`] or null.
size_t stgp_model_num_locations(const struct StgpModel *model);

// Spatial dimension of the model's locations, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle from [`stgp_model_create_json`] or null.
size_t stgp_model_spatial_dim(const struct StgpModel *model);

// Dimension of the estimator's internal state (locations x temporal
// order), or 0 for a null handle.
//
// # Safety
// `model` must be a live handle from [`stgp_model_create_json`] or null.
size_t stgp_model_state_dim(const struct StgpModel *model);

// Creates a streaming estimator anchored at `start_time`, initialized with
// the model's stationary prior.
//
// The filter keeps its own reference to the model; the model handle may be
// freed independently afterwards.
//
// # Safety
// `model` must be a live handle from [`stgp_model_create_json`];
// `out_filter` must point to writable space for one pointer.
enum StgpStatus stgp_filter_create(const struct StgpModel *model,
                                   double start_time,
                                   struct StgpFilter **out_filter);

// Releases a filter handle. Passing null is a no-op.
//
// # Safety
// `filter` must be a pointer returned by [`stgp_filter_create`] that has
// not been freed yet, or null.
void stgp_filter_free(struct StgpFilter *filter);

// Assimilates one measurement batch taken at `time`.
//
// `indices[i]` is the measured location's index in the model's set,
// `values[i]` the measurement, and `noise_sds[i]` its noise standard
// deviation; all three arrays hold `count` entries. `time` must not
// precede the filter's current time (equal is allowed, so one instant may
// be split across batches), and indices must be unique. On failure the
// filter is left unchanged.
//
// # Safety
// `filter` must be a live handle from [`stgp_filter_create`]; the three
// arrays must be readable for `count` elements each.
enum StgpStatus stgp_filter_update(struct StgpFilter *filter,
                                   double time,
                                   const size_t *indices,
                                   const double *values,
                                   const double *noise_sds,
                                   size_t count);

// Current filter time (time of the latest batch, or the anchor time).
// Returns NaN for a null handle.
//
// # Safety
// `filter` must be a live handle from [`stgp_filter_create`] or null.
double stgp_filter_time(const struct StgpFilter *filter);

// Accumulated negative log marginal likelihood of all assimilated batches.
// Returns NaN for a null handle.
//
// # Safety
// `filter` must be a live handle from [`stgp_filter_create`] or null.
double stgp_filter_nll(const struct StgpFilter *filter);

// Writes the field estimate at the filter's current time: posterior means
// and variances per model location, each `len == num_locations` long.
//
// # Safety
// `filter` must be a live handle from [`stgp_filter_create`]; `out_mean`
// and `out_variance` must be writable for `len` doubles each.
enum StgpStatus stgp_filter_estimate(const struct StgpFilter *filter,
                                     double *out_mean,
                                     double *out_variance,
                                     size_t len);

// Writes the posterior field covariance at the filter's current time in
// row-major order; `len` must equal `num_locations`, and the buffer must
// hold `len * len` doubles.
//
// # Safety
// `filter` must be a live handle from [`stgp_filter_create`]; `out_cov`
// must be writable for `len * len` doubles.
enum StgpStatus stgp_filter_covariance(const struct StgpFilter *filter,
                                       double *out_cov,
                                       size_t len);

// Writes the predicted field estimate at `time`, which must not precede
// the filter's current time. The filter itself is not modified.
//
// # Safety
// `filter` must be a live handle from [`stgp_filter_create`]; `out_mean`
// and `out_variance` must be writable for `len` doubles each.
enum StgpStatus stgp_filter_predict(const struct StgpFilter *filter,
                                    double time,
                                    double *out_mean,
                                    double *out_variance,
                                    size_t len);

// Creates prediction weights for `count` off-grid points with coordinates
// in `points`, flattened row-major (`count * dim` doubles, `dim` matching
// the model's spatial dimension).
//
// The query borrows nothing: the model handle may be freed afterwards. Use
// only with filters built from a model with the same location set.
//
// # Safety
// `model` must be a live handle from [`stgp_model_create_json`]; `points`
// must be readable for `count * dim` doubles; `out_query` must be writable
// for one pointer.
enum StgpStatus stgp_query_create(const struct StgpModel *model,
                                  const double *points,
                                  size_t count,
                                  size_t dim,
                                  struct StgpQuery **out_query);

// Releases a query handle. Passing null is a no-op.
//
// # Safety
// `query` must be a pointer returned by [`stgp_query_create`] that has not
// been freed yet, or null.
void stgp_query_free(struct StgpQuery *query);

// Extends the filter's current field estimate to the query's points:
// writes predictive means and variances, `len` matching the query's point
// count. The filter must come from a model with the same location set the
// query was created with.
//
// # Safety
// `query` and `filter` must be live handles; `out_mean` and `out_variance`
// must be writable for `len` doubles each.
enum StgpStatus stgp_query_extend(const struct StgpQuery *query,
                                  const struct StgpFilter *filter,
                                  double *out_mean,
                                  double *out_variance,
                                  size_t len);

// Creates an adaptive estimator that starts from the model's location set
// and may grow to at most `capacity` locations, anchored at `start_time`.
//
// When a step would exceed capacity, the location with the oldest most
// recent measurement is discarded (never-measured locations first, ties
// toward the lowest index).
//
// # Safety
// `model` must be a live handle from [`stgp_model_create_json`];
// `out_adaptive` must be writable for one pointer.
enum StgpStatus stgp_adaptive_create(const struct StgpModel *model,
                                     size_t capacity,
                                     double start_time,
                                     struct StgpAdaptive **out_adaptive);

// Releases an adaptive-estimator handle. Passing null is a no-op.
//
// # Safety
// `adaptive` must be a pointer returned by [`stgp_adaptive_create`] that
// has not been freed yet, or null.
void stgp_adaptive_free(struct StgpAdaptive *adaptive);

// Processes one step of `count` visits at `time`: measurements on known
// locations update the estimate, visits flagged new expand the set, and
// the set is contracted back to capacity afterwards.
//
// `points` holds the visited coordinates flattened row-major
// (`count * dim` doubles); `values` and `noise_sds` hold one entry per
// visit; `is_new[i]` must be true exactly when the visited point is not in
// the current set (query the set with [`stgp_adaptive_locations`]). On
// failure the estimator is left unchanged.
//
// # Safety
// `adaptive` must be a live handle from [`stgp_adaptive_create`]; `points`
// must be readable for `count * dim` doubles; `values`, `noise_sds`, and
// `is_new` for `count` elements each.
enum StgpStatus stgp_adaptive_step(struct StgpAdaptive *adaptive,
                                   double time,
                                   const double *points,
                                   const double *values,
                                   const double *noise_sds,
                                   const bool *is_new,
                                   size_t count,
                                   size_t dim);

// Number of locations currently in the adaptive set, or 0 for a null
// handle.
//
// # Safety
// `adaptive` must be a live handle from [`stgp_adaptive_create`] or null.
size_t stgp_adaptive_num_locations(const struct StgpAdaptive *adaptive);

// Writes the coordinates of the current location set, flattened row-major
// into `out_points` (`count * dim` doubles). `count` must equal
// [`stgp_adaptive_num_locations`] and `dim` the model's spatial dimension.
//
// # Safety
// `adaptive` must be a live handle from [`stgp_adaptive_create`];
// `out_points` must be writable for `count * dim` doubles.
enum StgpStatus stgp_adaptive_locations(const struct StgpAdaptive *adaptive,
                                        double *out_points,
                                        size_t count,
                                        size_t dim);

// Writes the adaptive estimator's current field estimate: posterior means
// and variances per location in set order, each `len` long with `len`
// equal to [`stgp_adaptive_num_locations`].
//
// # Safety
// `adaptive` must be a live handle from [`stgp_adaptive_create`];
// `out_mean` and `out_variance` must be writable for `len` doubles each.
enum StgpStatus stgp_adaptive_estimate(const struct StgpAdaptive *adaptive,
                                       double *out_mean,
                                       double *out_variance,
                                       size_t len);

// Accumulated negative log marginal likelihood of the adaptive estimator's
// assimilated measurements. Returns NaN for a null handle.
//
// # Safety
// `adaptive` must be a live handle from [`stgp_adaptive_create`] or null.
double stgp_adaptive_nll(const struct StgpAdaptive *adaptive);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STGP_H */
