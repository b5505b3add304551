#ifndef MSS_H
#define MSS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MssClaimFormat {
  MSS_CLAIM_FORMAT_CSV = 0,
  MSS_CLAIM_FORMAT_JSON = 1,
} MssClaimFormat;

/**
 * Result of every fallible call.
 */
typedef enum MssStatus {
  MSS_STATUS_OK = 0,
  MSS_STATUS_NULL_POINTER = 1,
  MSS_STATUS_INVALID_UTF8 = 2,
  MSS_STATUS_PARSE = 3,
  MSS_STATUS_INVALID_ARGUMENT = 4,
  MSS_STATUS_OUT_OF_RANGE = 5,
  MSS_STATUS_BUFFER_TOO_SMALL = 6,
  MSS_STATUS_NUMERICAL = 7,
  MSS_STATUS_IO = 8,
  MSS_STATUS_PANIC = 99,
} MssStatus;

/**
 * Opaque parsed claim set.
 */
typedef struct MssClaims MssClaims;

/**
 * Opaque fitted model.
 */
typedef struct MssFit MssFit;

/**
 * Model hyperparameters; see [`mss_hyperparams_default`].
 */
typedef struct MssHyperparams {
  double kappa;
  double b1;
  double b0;
  double eta_reliable;
  double theta_reliable;
  double eta_unreliable;
  double theta_unreliable;
  size_t truncation;
} MssHyperparams;

/**
 * Fit controls; see [`mss_fit_options_default`].
 */
typedef struct MssFitOptions {
  size_t max_sweeps;
  double tol;
  uint64_t seed;
  bool block_moves;
  /**
   * Worker threads; 0 uses the global pool. Results do not depend on it.
   */
  size_t threads;
} MssFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty after a success. The
 * pointer stays valid until the next `mss_*` call on the same thread.
 */
const char *mss_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mss_version(void);

/**
 * # Safety
 * `out` must be null or point to writable memory for one `MssHyperparams`.
 */
enum MssStatus mss_hyperparams_default(struct MssHyperparams *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one `MssFitOptions`.
 */
enum MssStatus mss_fit_options_default(struct MssFitOptions *out);

/**
 * Parse `len` bytes of UTF-8 claims. On success `*out` receives a handle
 * to release with [`mss_claims_free`].
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum MssStatus mss_claims_parse(const char *data,
                                size_t len,
                                enum MssClaimFormat format,
                                struct MssClaims **out);

/**
 * # Safety
 * `claims` must be null or a handle from [`mss_claims_parse`] not yet freed.
 */
void mss_claims_free(struct MssClaims *claims);

/**
 * Number of sources, or 0 for a null handle.
 *
 * # Safety
 * `claims` must be null or a live handle.
 */
size_t mss_claims_num_sources(const struct MssClaims *claims);

/**
 * # Safety
 * `claims` must be null or a live handle.
 */
size_t mss_claims_num_objects(const struct MssClaims *claims);

/**
 * # Safety
 * `claims` must be null or a live handle.
 */
size_t mss_claims_num_claims(const struct MssClaims *claims);

/**
 * Domain size of object `m`, or 0 when out of range.
 *
 * # Safety
 * `claims` must be null or a live handle.
 */
size_t mss_claims_domain_size(const struct MssClaims *claims, size_t m);

/**
 * External id of source `n`.
 *
 * # Safety
 * `claims` must be a live handle; `buf` must hold `cap` writable bytes or
 * be null; `needed` must be null or writable.
 */
enum MssStatus mss_claims_source_id(const struct MssClaims *claims,
                                    size_t n,
                                    char *buf,
                                    size_t cap,
                                    size_t *needed);

/**
 * External id of object `m`.
 *
 * # Safety
 * As for [`mss_claims_source_id`].
 */
enum MssStatus mss_claims_object_id(const struct MssClaims *claims,
                                    size_t m,
                                    char *buf,
                                    size_t cap,
                                    size_t *needed);

/**
 * Label of value `k` of object `m`.
 *
 * # Safety
 * As for [`mss_claims_source_id`].
 */
enum MssStatus mss_claims_value_label(const struct MssClaims *claims,
                                      size_t m,
                                      size_t k,
                                      char *buf,
                                      size_t cap,
                                      size_t *needed);

/**
 * Fit the model. Null `hyperparams` or `options` select the defaults. On
 * success `*out` receives a handle to release with [`mss_fit_free`]; the
 * fit keeps its own copy of the claims.
 *
 * # Safety
 * `claims` must be a live handle; the other pointers null or valid.
 */
enum MssStatus mss_fit(const struct MssClaims *claims,
                       const struct MssHyperparams *hyperparams,
                       const struct MssFitOptions *options,
                       struct MssFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from [`mss_fit`] not yet freed.
 */
void mss_fit_free(struct MssFit *fit);

/**
 * Final ELBO, or NaN for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
double mss_fit_elbo(const struct MssFit *fit);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t mss_fit_iterations(const struct MssFit *fit);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
bool mss_fit_converged(const struct MssFit *fit);

/**
 * MAP value index and its posterior probability for every object. Both
 * arrays must hold `len` = number of objects entries; `confidences` may be
 * null.
 *
 * # Safety
 * `values` must hold `len` writable entries; `confidences` likewise or null.
 */
enum MssStatus mss_fit_truths(const struct MssFit *fit,
                              size_t *values,
                              double *confidences,
                              size_t len);

/**
 * Reliability score of every source; `len` must equal the source count.
 *
 * # Safety
 * `scores` must hold `len` writable entries.
 */
enum MssStatus mss_fit_reliability(const struct MssFit *fit, double *scores, size_t len);

/**
 * The full report as JSON: posteriors, rankings, groups and the resolved
 * configuration.
 *
 * # Safety
 * As for [`mss_claims_source_id`].
 */
enum MssStatus mss_fit_report_json(const struct MssFit *fit, char *buf, size_t cap, size_t *needed);

/**
 * Validate hyperparameters without fitting.
 *
 * # Safety
 * `hyperparams` must be null or point to one readable `MssHyperparams`.
 */
enum MssStatus mss_hyperparams_validate(const struct MssHyperparams *hyperparams);

/**
 * A copy of the last error message, for callers that prefer owned
 * strings.
 *
 * # Safety
 * As for [`mss_claims_source_id`].
 */
size_t mss_last_error_copy(char *buf, size_t cap, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSS_H */
