#ifndef SPK_H
#define SPK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpkMode {
  SPK_MODE_PENALIZED = 0,
  SPK_MODE_CONSTRAINED = 1,
} SpkMode;

typedef enum SpkRule {
  /**
   * `α_k = p0`.
   */
  SPK_RULE_CONSTANT = 0,
  /**
   * `α_k = p0 / ‖d^k‖`.
   */
  SPK_RULE_NORMALIZED = 1,
  /**
   * `α_k = p0 / (k + p1)`.
   */
  SPK_RULE_DIMINISHING = 2,
  /**
   * `α_k = p1 (F^k − p0) / ‖d^k‖²`.
   */
  SPK_RULE_POLYAK = 3,
} SpkRule;

typedef enum SpkStatus {
  SPK_STATUS_OK = 0,
  SPK_STATUS_NULL_POINTER = 1,
  SPK_STATUS_INVALID_UTF8 = 2,
  SPK_STATUS_DIMENSION_MISMATCH = 3,
  SPK_STATUS_INVALID_PROBLEM = 4,
  SPK_STATUS_NON_FINITE = 5,
  SPK_STATUS_PRECONDITION = 6,
  SPK_STATUS_CONFIG = 7,
  SPK_STATUS_UNDEFINED_BOUND = 8,
  SPK_STATUS_TOO_LARGE = 9,
  SPK_STATUS_PARSE = 10,
  SPK_STATUS_IO = 11,
  SPK_STATUS_PANIC = 12,
} SpkStatus;

typedef enum SpkTermination {
  SPK_TERMINATION_CONVERGED = 0,
  SPK_TERMINATION_MAX_ITERS = 1,
  SPK_TERMINATION_STATIONARY = 2,
  SPK_TERMINATION_TARGET_REACHED = 3,
} SpkTermination;

/**
 * Opaque problem handle.
 */
typedef struct SpkProblem SpkProblem;

/**
 * Opaque solver-result handle.
 */
typedef struct SpkPsmResult SpkPsmResult;

/**
 * Projected subgradient run options.
 */
typedef struct SpkPsmOptions {
  enum SpkRule rule;
  double p0;
  double p1;
  size_t max_iters;
  /**
   * Stopping tolerance on `‖x^{k+1} − x^k‖`; negative disables the test.
   */
  double stop_tol;
  size_t record_every;
  /**
   * Initial point of length `n`, or null for the origin.
   */
  const double *x0;
} SpkPsmOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failing call on this thread; empty after a
 * success. The pointer stays valid until the next `spk_*` call here.
 */
const char *spk_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *spk_version(void);

/**
 * Parses a problem from its JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpkStatus spk_problem_from_json(const char *json, struct SpkProblem **out);

/**
 * Releases a problem handle; null is ignored.
 *
 * # Safety
 * `problem` must come from [`spk_problem_from_json`] and not be used afterwards.
 */
void spk_problem_free(struct SpkProblem *problem);

/**
 * Writes `n`, `m`, `p` and `s`; any output pointer may be null.
 *
 * # Safety
 * `problem` must be a live handle; non-null outputs must be writable.
 */
enum SpkStatus spk_problem_dims(const struct SpkProblem *problem,
                                size_t *n,
                                size_t *m,
                                size_t *p,
                                size_t *s);

/**
 * Writes `Π_S(x)` into `out` (length `n`).
 *
 * # Safety
 * `x` and `out` must point to `n` doubles.
 */
enum SpkStatus spk_project_sparse(const double *x, size_t n, size_t s, double *out);

/**
 * Evaluates `F_τ(x)`.
 *
 * # Safety
 * `problem` must be live, `x` must point to `n` doubles, `value` must be writable.
 */
enum SpkStatus spk_penalty_value(const struct SpkProblem *problem,
                                 double tau,
                                 const double *x,
                                 size_t n,
                                 double *value);

/**
 * Writes the selected subgradient of `F_τ` at `x` into `d` (length `n`).
 *
 * # Safety
 * `problem` must be live; `x` and `d` must point to `n` doubles.
 */
enum SpkStatus spk_penalty_subgradient(const struct SpkProblem *problem,
                                       double tau,
                                       const double *x,
                                       size_t n,
                                       double *d);

/**
 * Runs the projected subgradient method on `F_τ`.
 *
 * # Safety
 * `problem` must be live, `options` readable (its `x0` null or pointing to
 * `n` doubles), and `out` writable.
 */
enum SpkStatus spk_run_psm(const struct SpkProblem *problem,
                           double tau,
                           const struct SpkPsmOptions *options,
                           struct SpkPsmResult **out);

/**
 * Releases a result handle; null is ignored.
 *
 * # Safety
 * `result` must come from [`spk_run_psm`] and not be used afterwards.
 */
void spk_psm_result_free(struct SpkPsmResult *result);

/**
 * Copies the final iterate into `out` (length `n`).
 *
 * # Safety
 * `result` must be live and `out` must point to `n` doubles.
 */
enum SpkStatus spk_psm_result_x(const struct SpkPsmResult *result, double *out, size_t n);

/**
 * Writes the number of steps taken, the termination reason, the number
 * of trace records and the final `F_τ`; any output pointer may be null.
 *
 * # Safety
 * `result` must be live; non-null outputs must be writable.
 */
enum SpkStatus spk_psm_result_info(const struct SpkPsmResult *result,
                                   size_t *iterations,
                                   enum SpkTermination *termination,
                                   size_t *trace_len,
                                   double *final_value);

/**
 * The trace as CSV text.
 *
 * # Safety
 * `result` must be live and `out` writable.
 */
enum SpkStatus spk_psm_result_trace_csv(const struct SpkPsmResult *result, char **out);

/**
 * Brute-force global optimum; writes the summary JSON.
 *
 * # Safety
 * `problem` must be live and `out` writable.
 */
enum SpkStatus spk_oracle_solve(const struct SpkProblem *problem,
                                double tau,
                                enum SpkMode mode,
                                char **out);

/**
 * Constraint-qualification and KKT report at `x` as JSON.
 *
 * # Safety
 * `problem` must be live, `x` must point to `n` doubles, `out` writable.
 */
enum SpkStatus spk_check_cq_json(const struct SpkProblem *problem,
                                 const double *x,
                                 size_t n,
                                 char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from an `spk_*` out-parameter and not be used afterwards.
 */
void spk_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPK_H */
