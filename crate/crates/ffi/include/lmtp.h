#ifndef LMTP_H
#define LMTP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum LmtpStatus {
  LMTP_STATUS_OK = 0,
  LMTP_STATUS_NULL_POINTER = 1,
  LMTP_STATUS_INVALID_INPUT = 2,
  LMTP_STATUS_ESTIMATION = 3,
  LMTP_STATUS_NUMERICAL = 4,
  LMTP_STATUS_IO = 5,
  LMTP_STATUS_PANIC = 6,
} LmtpStatus;

// A longitudinal dataset.
typedef struct LmtpDataset LmtpDataset;

// Stacked trajectory estimates of two policies with their influence
// function values.
typedef struct LmtpEstimate LmtpEstimate;

// An intervention policy.
typedef struct LmtpPolicy LmtpPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if the last call
// succeeded. Valid until the next call on this thread.
const char *lmtp_last_error(void);

// Library version as a static string.
const char *lmtp_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void lmtp_string_free(char *s);

// Loads a wide-format CSV file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum LmtpStatus lmtp_dataset_load_csv(const char *path, struct LmtpDataset **out);

// Parses wide-format CSV text.
//
// # Safety
// `text` must be a nul-terminated string; `out` must be writable.
enum LmtpStatus lmtp_dataset_from_csv(const char *text, struct LmtpDataset **out);

// Draws `n` individuals from the built-in linear-Gaussian process with
// default parameters at effect size `beta`.
//
// # Safety
// `out` must be writable.
enum LmtpStatus lmtp_dataset_simulate(double beta,
                                      size_t n,
                                      uint64_t seed,
                                      struct LmtpDataset **out);

// Writes the number of individuals and time points.
//
// # Safety
// `data` must be a live dataset handle; `n` and `tau` must be writable.
enum LmtpStatus lmtp_dataset_shape(const struct LmtpDataset *data, size_t *n, size_t *tau);

// # Safety
// `data` must be null or a handle not yet freed.
void lmtp_dataset_free(struct LmtpDataset *data);

// Parses a policy: `identity`, `shift:<x>`, `shift:<x>,bound=<c>`,
// `shift:<x>,bound=L{t}_<j>` or `threshold:<floor>`.
//
// # Safety
// `spec` must be a nul-terminated string; `out` must be writable.
enum LmtpStatus lmtp_policy_parse(const char *spec, struct LmtpPolicy **out);

// # Safety
// `policy` must be null or a handle not yet freed.
void lmtp_policy_free(struct LmtpPolicy *policy);

// Estimates both trajectories. `config_json` is an estimator configuration
// as JSON, or null for the defaults.
//
// # Safety
// Handles must be live; `config_json` null or nul-terminated; `out` writable.
enum LmtpStatus lmtp_estimate_pair(const struct LmtpDataset *data,
                                   const struct LmtpPolicy *policy_prime,
                                   const struct LmtpPolicy *policy_dprime,
                                   const char *config_json,
                                   struct LmtpEstimate **out);

// Number of time points of an estimate.
//
// # Safety
// `est` must be a live handle; `tau` writable.
enum LmtpStatus lmtp_estimate_tau(const struct LmtpEstimate *est, size_t *tau);

// Copies `(theta'_1..theta'_tau, theta''_1..theta''_tau)` into `out`,
// which must hold `len >= 2 tau` values.
//
// # Safety
// `est` must be a live handle; `out` must point to `len` writable doubles.
enum LmtpStatus lmtp_estimate_theta(const struct LmtpEstimate *est, double *out, size_t len);

// Runs the Wald, max and local tests for `contrast` (`baseline`,
// `adjacent` or `file:<path>`) at level `alpha` and returns the report as
// JSON.
//
// # Safety
// `est` must be a live handle; `contrast` nul-terminated; `out_json` writable.
enum LmtpStatus lmtp_inference_json(const struct LmtpEstimate *est,
                                    const char *contrast,
                                    double alpha,
                                    char **out_json);

// # Safety
// `est` must be null or a handle not yet freed.
void lmtp_estimate_free(struct LmtpEstimate *est);

// Analytic trajectories, effects and calibrated gamma of the built-in
// process at effect size `beta`, as JSON.
//
// # Safety
// `out_json` must be writable.
enum LmtpStatus lmtp_truth_json(double beta, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMTP_H */
