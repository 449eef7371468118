#ifndef MARBIN_H
#define MARBIN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum MbStatus {
  MB_STATUS_OK = 0,
  MB_STATUS_INVALID_PARAM = 1,
  MB_STATUS_ENUMERATION_TOO_LARGE = 2,
  MB_STATUS_EXACT_MODE_REQUIRED = 3,
  MB_STATUS_OUT_OF_RANGE = 4,
  MB_STATUS_NULL_POINTER = 5,
  MB_STATUS_SINGULAR = 6,
  MB_STATUS_UNSUPPORTED = 7,
  MB_STATUS_PANIC = 8,
  MB_STATUS_OTHER = 9,
} MbStatus;

/**
 * Real functional tabulated on an `MbSpace`.
 */
typedef struct MbFunctional MbFunctional;

/**
 * Enumerated sample space of a marked binomial process.
 */
typedef struct MbSpace MbSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *mb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mb_version(void);

/**
 * Builds the enumerated space for horizon `horizon`, `n_marks` marks with
 * probabilities `mark_probs`, and jump probability `lambda`.
 *
 * # Safety
 * `marks` and `mark_probs` must point to `n_marks` readable doubles and `out`
 * must be writable. The handle written to `out` must be released with
 * `mb_space_free`.
 */
enum MbStatus mb_space_new(size_t horizon,
                           const double *marks,
                           const double *mark_probs,
                           size_t n_marks,
                           double lambda,
                           struct MbSpace **out);

/**
 * # Safety
 * `space` must be null or a handle from `mb_space_new` not yet freed.
 */
void mb_space_free(struct MbSpace *space);

/**
 * Number of configurations, or 0 for a null handle.
 *
 * # Safety
 * `space` must be null or a live handle.
 */
size_t mb_space_size(const struct MbSpace *space);

/**
 * Functional from a table of `len` values indexed by configuration rank.
 *
 * # Safety
 * `space` must be a live handle, `values` must point to `len` doubles and
 * `out` must be writable. Release the result with `mb_functional_free`.
 */
enum MbStatus mb_functional_from_table(const struct MbSpace *space,
                                       const double *values,
                                       size_t len,
                                       struct MbFunctional **out);

/**
 * Jump count N_t.
 *
 * # Safety
 * `space` must be a live handle and `out` writable.
 */
enum MbStatus mb_functional_counting(const struct MbSpace *space,
                                     size_t t,
                                     struct MbFunctional **out);

/**
 * # Safety
 * `f` must be null or a handle not yet freed.
 */
void mb_functional_free(struct MbFunctional *f);

/**
 * E[F].
 *
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum MbStatus mb_expectation(const struct MbFunctional *f, double *out);

/**
 * Var[F].
 *
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum MbStatus mb_variance(const struct MbFunctional *f, double *out);

/**
 * Total variation distance between two pmfs on {0, 1, ...}.
 *
 * # Safety
 * `a` and `b` must point to `na` and `nb` doubles; `out` must be writable.
 */
enum MbStatus mb_exact_tv(const double *a, size_t na, const double *b, size_t nb, double *out);

/**
 * Poisson approximation bound for head runs of length `m` in `n+1` tosses.
 *
 * # Safety
 * `out` must be writable.
 */
enum MbStatus mb_head_run_bound(size_t n, size_t m, double p, double *out);

/**
 * Compound Poisson bound for DNA clump counts.
 *
 * # Safety
 * `out` must be writable.
 */
enum MbStatus mb_dna_bound(size_t n, size_t h, double alpha, double mu, double *out);

/**
 * Quadratic hedging risk of the call (S_T − strike)₊ in the ternary market:
 * the optimal-strategy residual and the least-squares oracle minimum.
 *
 * # Safety
 * `residual` and `oracle` must be writable.
 */
enum MbStatus mb_hedge_call_residual(double a,
                                     double b,
                                     double r,
                                     double lambda,
                                     double p,
                                     size_t horizon,
                                     double strike,
                                     double x,
                                     double *residual,
                                     double *oracle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARBIN_H */
