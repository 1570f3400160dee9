#ifndef RSL_H
#define RSL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum RslStatus {
  RSL_STATUS_OK = 0,
  RSL_STATUS_NULL_ARGUMENT = 1,
  RSL_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration, expression or family parameters.
   */
  RSL_STATUS_CONFIG = 3,
  /**
   * Argument outside the domain of the operation, or mismatched sizes.
   */
  RSL_STATUS_DOMAIN = 4,
  RSL_STATUS_PARAM_OUT_OF_BOX = 5,
  /**
   * No duality theorem covers the request.
   */
  RSL_STATUS_NOT_APPLICABLE = 6,
  RSL_STATUS_PRECONDITION_NOT_CERTIFIED = 7,
  RSL_STATUS_MPR_INFEASIBLE = 8,
  RSL_STATUS_NUMERIC_OVERFLOW = 9,
  /**
   * Lattice or density grid cannot represent the problem.
   */
  RSL_STATUS_GRID_TOO_COARSE = 10,
  RSL_STATUS_SUPERHEDGE_VIOLATION = 11,
  RSL_STATUS_UNSUPPORTED = 12,
  RSL_STATUS_IO = 13,
  RSL_STATUS_PANIC = 99,
} RslStatus;

/**
 * Opaque handle to an uncertainty specification.
 */
typedef struct RslSpec RslSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *rsl_last_error(void);

/**
 * Library version and report schema, as a static string.
 */
const char *rsl_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void rsl_string_free(char *s);

/**
 * Build a spec from model TOML text.
 *
 * # Safety
 * `toml` must be a valid C string; `out` must be writable.
 */
enum RslStatus rsl_spec_from_toml(const char *toml, struct RslSpec **out);

/**
 * Release a spec. Null is ignored.
 *
 * # Safety
 * `spec` must come from [`rsl_spec_from_toml`] and not have been freed.
 */
void rsl_spec_free(struct RslSpec *spec);

/**
 * State dimension and number of parameters.
 *
 * # Safety
 * `spec` must be a live handle; outputs must be writable.
 */
enum RslStatus rsl_spec_dims(const struct RslSpec *spec, size_t *dim, size_t *n_params);

/**
 * Drift (`d` values) and diffusion (`d²`, row-major) at parameter `f`, time
 * `t` and state `x`, taking `x` as the whole path so far.
 *
 * # Safety
 * Arrays must hold the stated number of elements.
 */
enum RslStatus rsl_spec_coefficients(const struct RslSpec *spec,
                                     const double *f,
                                     size_t n_f,
                                     double t,
                                     const double *x,
                                     size_t n_x,
                                     double *b_out,
                                     double *a_out);

/**
 * Run every condition certifier; `json_out` receives the certificates.
 *
 * # Safety
 * `spec` must be a live handle; `json_out` must be writable.
 */
enum RslStatus rsl_certify(const struct RslSpec *spec,
                           size_t budget,
                           uint64_t seed,
                           char **json_out);

/**
 * Superhedging price and initial hedge ratio of `payoff` (an expression in
 * `X` and `max_X`) on a lattice with `n_steps` steps.
 *
 * # Safety
 * `spec` must be a live handle; `payoff` a valid C string; outputs writable.
 */
enum RslStatus rsl_superhedge(const struct RslSpec *spec,
                              const char *payoff,
                              size_t n_steps,
                              double *price_out,
                              double *hedge_out);

/**
 * Robust primal value `u(x)` for `utility` (`log`, `power:<p>`, `exp:<λ>`).
 *
 * # Safety
 * `spec` must be a live handle; `utility` a valid C string; `out` writable.
 */
enum RslStatus rsl_primal_value(const struct RslSpec *spec,
                                const char *utility,
                                double x,
                                size_t n_steps,
                                uint64_t seed,
                                double *out);

/**
 * Robust dual value `v(y)`.
 *
 * # Safety
 * As for [`rsl_primal_value`].
 */
enum RslStatus rsl_dual_value(const struct RslSpec *spec,
                              const char *utility,
                              double y,
                              size_t n_steps,
                              uint64_t seed,
                              double *out);

/**
 * Run an experiment config (TOML text, one engine section) and return its
 * `report.json` contents. No files are written. `*passed` is set to 1 when
 * the report passes. A relative model path is resolved against the working
 * directory.
 *
 * # Safety
 * `config_toml` must be a valid C string; outputs must be writable.
 */
enum RslStatus rsl_run_experiment(const char *config_toml, char **json_out, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSL_H */
