#ifndef ASTPA_H
#define ASTPA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ASTPA_SAMPLER_QNP 0

#define ASTPA_SAMPLER_HMC 1

typedef enum AstpaStatus {
  ASTPA_STATUS_OK = 0,
  ASTPA_STATUS_NULL_POINTER = 1,
  ASTPA_STATUS_INVALID_ARGUMENT = 2,
  ASTPA_STATUS_UNKNOWN_PROBLEM = 3,
  ASTPA_STATUS_ESTIMATION_FAILED = 4,
  ASTPA_STATUS_PANIC = 5,
} AstpaStatus;

/**
 * Opaque estimator handle.
 */
typedef struct AstpaEstimator AstpaEstimator;

/**
 * Result of one estimation run. `cov` is NaN when no analytical C.o.V is
 * available.
 */
typedef struct AstpaResult {
  double p_f;
  double log_p_f;
  double cov;
  uint64_t n_total;
  double ess_min;
  double accept_rate;
} AstpaResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *astpa_version(void);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *astpa_last_error(void);

/**
 * Estimator for a registry problem (`"ex3-d2-r2"`, ...) with its tabulated
 * parameters and budget.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AstpaStatus astpa_estimator_from_registry(const char *id,
                                               uint32_t sampler_code,
                                               struct AstpaEstimator **out);

/**
 * Estimator for `g(x) = offset + coeffsᵀx` with `x ~ N(0, I_dim)`, where
 * `P(g ≤ 0) = Φ(-offset/‖coeffs‖)`.
 *
 * # Safety
 * `coeffs` must point to `dim` doubles and `out` must be a valid pointer.
 */
enum AstpaStatus astpa_estimator_linear_gaussian(size_t dim,
                                                 double offset,
                                                 const double *coeffs,
                                                 uint32_t sampler_code,
                                                 uint64_t n_total,
                                                 struct AstpaEstimator **out);

/**
 * Dimension of the estimator's problem.
 *
 * # Safety
 * `h` must come from a constructor and `dim` must be a valid pointer.
 */
enum AstpaStatus astpa_estimator_dim(struct AstpaEstimator *h, size_t *dim);

/**
 * Sets the likelihood spread `sigma` and the `g_c` quantile `q`.
 *
 * # Safety
 * `h` must come from a constructor.
 */
enum AstpaStatus astpa_estimator_set_params(struct AstpaEstimator *h, double sigma, double q);

/**
 * Sets the total number of limit-state calls per run.
 *
 * # Safety
 * `h` must come from a constructor.
 */
enum AstpaStatus astpa_estimator_set_budget(struct AstpaEstimator *h, uint64_t n_total);

/**
 * One estimation run; identical seeds give identical results.
 *
 * # Safety
 * `h` must come from a constructor and `out` must be a valid pointer.
 */
enum AstpaStatus astpa_estimator_run(struct AstpaEstimator *h,
                                     uint64_t seed,
                                     struct AstpaResult *out);

/**
 * One estimation run returning the full report as JSON. Free the string
 * with [`astpa_string_free`].
 *
 * # Safety
 * `h` must come from a constructor and `json` must be a valid pointer.
 */
enum AstpaStatus astpa_estimator_run_json(struct AstpaEstimator *h, uint64_t seed, char **json);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void astpa_string_free(char *s);

/**
 * Frees an estimator. Null is ignored.
 *
 * # Safety
 * `h` must come from a constructor and must not be used afterwards.
 */
void astpa_estimator_free(struct AstpaEstimator *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASTPA_H */
