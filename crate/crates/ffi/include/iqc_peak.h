#ifndef IQC_PEAK_H
#define IQC_PEAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IqcErrorCode {
  IQC_ERROR_CODE_OK = 0,
  IQC_ERROR_CODE_NULL_POINTER = 1,
  IQC_ERROR_CODE_INVALID_UTF8 = 2,
  IQC_ERROR_CODE_PARSE = 3,
  IQC_ERROR_CODE_INVALID_ARGUMENT = 4,
  IQC_ERROR_CODE_DIMENSION_MISMATCH = 5,
  IQC_ERROR_CODE_INVALID_UNCERTAINTY = 6,
  IQC_ERROR_CODE_INFEASIBLE = 7,
  IQC_ERROR_CODE_SOLVER_FAILURE = 8,
  IQC_ERROR_CODE_VOLUME_UNBOUNDED = 9,
  IQC_ERROR_CODE_ILL_POSED = 10,
  IQC_ERROR_CODE_BUFFER_TOO_SMALL = 11,
  IQC_ERROR_CODE_WRONG_REQUEST = 12,
  IQC_ERROR_CODE_INTERNAL = 13,
} IqcErrorCode;

/**
 * Result of a gain analysis.
 */
typedef struct IqcGainResult IqcGainResult;

/**
 * A validated problem document.
 */
typedef struct IqcProblem IqcProblem;

/**
 * Result of a reachability analysis.
 */
typedef struct IqcReachResult IqcReachResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *iqc_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `iqc_*` call on the same thread.
 */
const char *iqc_last_error_message(void);

/**
 * Parses and validates a JSON problem document. With `strict`, unknown
 * keys are rejected.
 *
 * # Safety
 * `json` must be null or a NUL-terminated string; `out` must be null or
 * point to writable storage for one pointer.
 */
enum IqcErrorCode iqc_problem_from_json(const char *json, bool strict, struct IqcProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from [`iqc_problem_from_json`] that
 * has not been freed.
 */
void iqc_problem_free(struct IqcProblem *problem);

/**
 * State dimension of the plant.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_problem_state_dim(const struct IqcProblem *problem, size_t *out);

/**
 * Runs the gain analysis configured by the problem's options. The problem
 * must request `gain`.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_analyze_gain(const struct IqcProblem *problem, struct IqcGainResult **out);

/**
 * # Safety
 * `result` must be null or a live handle from [`iqc_analyze_gain`].
 */
void iqc_gain_free(struct IqcGainResult *result);

/**
 * Certified gain bound.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_gain_gamma(const struct IqcGainResult *result, double *out);

/**
 * Decay rate of the certificate.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_gain_rho(const struct IqcGainResult *result, double *out);

/**
 * Basis pole of the certificate, NaN for classes without a basis.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_gain_lambda(const struct IqcGainResult *result, double *out);

/**
 * Certificate as a JSON document (readable by `iqc-peak check`). Release
 * with [`iqc_string_free`].
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_gain_to_json(const struct IqcGainResult *result, char **out);

/**
 * Runs the reachability analysis configured by the problem's options. The
 * problem must request `reach`.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_analyze_reach(const struct IqcProblem *problem, struct IqcReachResult **out);

/**
 * # Safety
 * `result` must be null or a live handle from [`iqc_analyze_reach`].
 */
void iqc_reach_free(struct IqcReachResult *result);

/**
 * `-log det(Qtilde)` of the certified ellipsoid.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_reach_neg_log_det(const struct IqcReachResult *result, double *out);

/**
 * Decay rate of the certificate.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_reach_rho(const struct IqcReachResult *result, double *out);

/**
 * Copies the `nx * nx` ellipsoid matrix `Qtilde` row-major into `buf`.
 * Returns [`IqcErrorCode::BufferTooSmall`] when `len < nx * nx`.
 *
 * # Safety
 * `result` must be a live handle; `buf` must be writable for `len` doubles.
 */
enum IqcErrorCode iqc_reach_q_tilde(const struct IqcReachResult *result, double *buf, size_t len);

/**
 * Certificate as a JSON document. Release with [`iqc_string_free`].
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum IqcErrorCode iqc_reach_to_json(const struct IqcReachResult *result, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void iqc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IQC_PEAK_H */
