#ifndef RFLSTD_H
#define RFLSTD_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RflstdStatus {
  RFLSTD_STATUS_OK = 0,
  RFLSTD_STATUS_NULL_POINTER = 1,
  RFLSTD_STATUS_INVALID_UTF8 = 2,
  RFLSTD_STATUS_INVALID_PARAMETER = 3,
  RFLSTD_STATUS_CONFIG = 4,
  RFLSTD_STATUS_NUMERICAL = 5,
  RFLSTD_STATUS_CONVERGENCE = 6,
  RFLSTD_STATUS_ASSUMPTION = 7,
  RFLSTD_STATUS_IO = 8,
  RFLSTD_STATUS_BUFFER_TOO_SMALL = 9,
  RFLSTD_STATUS_PANIC = 10,
  RFLSTD_STATUS_ILL_CONDITIONED = 11,
  RFLSTD_STATUS_OTHER = 12,
} RflstdStatus;

/**
 * Opaque sweep configuration.
 */
typedef struct RflstdConfig RflstdConfig;

/**
 * Opaque Markov reward process.
 */
typedef struct RflstdMrp RflstdMrp;

/**
 * Metrics at one `(ratio, λ, seed)` point.
 */
typedef struct RflstdPointMetrics {
  size_t num_features;
  size_t m;
  size_t n;
  double empirical_msbe;
  double true_msbe;
  double msve;
  double delta;
  double theory_empirical_msbe;
  double theory_true_msbe;
  double theory_msve;
  /**
   * 1 when the instance fit succeeded, 0 otherwise.
   */
  int32_t instance_ok;
  /**
   * 1 when the theory evaluation succeeded, 0 otherwise.
   */
  int32_t theory_ok;
} RflstdPointMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *rflstd_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void rflstd_string_free(char *s);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum RflstdStatus rflstd_mrp_synthetic(size_t num_states,
                                       size_t state_dim,
                                       double discount,
                                       uint64_t seed,
                                       struct RflstdMrp **out);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum RflstdStatus rflstd_mrp_gridworld(size_t side,
                                       size_t state_dim,
                                       double discount,
                                       uint64_t seed,
                                       struct RflstdMrp **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum RflstdStatus rflstd_mrp_from_json(const char *json, struct RflstdMrp **out);

/**
 * Serializes the MRP; release the result with [`rflstd_string_free`].
 *
 * # Safety
 * `mrp` must be a live handle and `out` valid for writes.
 */
enum RflstdStatus rflstd_mrp_to_json(const struct RflstdMrp *mrp, char **out);

/**
 * # Safety
 * `mrp` must be a live handle or null.
 */
size_t rflstd_mrp_num_states(const struct RflstdMrp *mrp);

/**
 * # Safety
 * `mrp` must come from this library and not be freed twice.
 */
void rflstd_mrp_free(struct RflstdMrp *mrp);

/**
 * Writes the stationary distribution into `out[0..num_states]`.
 *
 * # Safety
 * `mrp` must be a live handle and `out` valid for `len` writes.
 */
enum RflstdStatus rflstd_mrp_stationary(const struct RflstdMrp *mrp, double *out, size_t len);

/**
 * Writes the value function into `out[0..num_states]`.
 *
 * # Safety
 * `mrp` must be a live handle and `out` valid for `len` writes.
 */
enum RflstdStatus rflstd_mrp_values(const struct RflstdMrp *mrp, double *out, size_t len);

/**
 * Kernel `E[σ(wᵀa) σ(wᵀb)]`. Activation codes: 0 linear, 1 relu, 2 abs, 3 sign.
 *
 * # Safety
 * `a` and `b` must be valid for `dim` reads and `out` valid for writes.
 */
enum RflstdStatus rflstd_phi(const double *a,
                             const double *b,
                             size_t dim,
                             int32_t activation,
                             double *out);

/**
 * Solves the `δ` fixed point over the eigenvalues `re[i] + i·im[i]`
 * (`im` may be null for a real spectrum) of a compressed `m × m` operator.
 *
 * # Safety
 * `re` (and `im` when non-null) must be valid for `len` reads; `out` valid for writes.
 */
enum RflstdStatus rflstd_delta(const double *re,
                               const double *im,
                               size_t len,
                               size_t m,
                               size_t num_features,
                               double lambda,
                               double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum RflstdStatus rflstd_config_from_file(const char *path, struct RflstdConfig **out);

/**
 * # Safety
 * `toml` must be a NUL-terminated string and `out` valid for writes.
 */
enum RflstdStatus rflstd_config_from_str(const char *toml, struct RflstdConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be freed twice.
 */
void rflstd_config_free(struct RflstdConfig *cfg);

/**
 * Fits one instance and evaluates the theory at `N = round(ratio · m)`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid for writes.
 */
enum RflstdStatus rflstd_point_evaluate(const struct RflstdConfig *cfg,
                                        double ratio,
                                        double lambda,
                                        uint64_t seed,
                                        struct RflstdPointMetrics *out);

/**
 * Runs a sweep and writes `sweep.csv` and `summary.json` into `out_dir`.
 * Returns [`RflstdStatus::Numerical`] when some grid point failed on every instance.
 *
 * # Safety
 * `cfg` must be a live handle and `out_dir` a NUL-terminated string.
 */
enum RflstdStatus rflstd_sweep_run(const struct RflstdConfig *cfg,
                                   const char *out_dir,
                                   size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFLSTD_H */
