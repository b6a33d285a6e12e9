#ifndef RSRIS_H
#define RSRIS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RsrisStatus {
  RSRIS_STATUS_OK = 0,
  RSRIS_STATUS_NULL_POINTER = 1,
  RSRIS_STATUS_INVALID_UTF8 = 2,
  RSRIS_STATUS_CONFIG = 3,
  RSRIS_STATUS_INFEASIBLE = 4,
  RSRIS_STATUS_SOLVER = 5,
  RSRIS_STATUS_IO = 6,
  RSRIS_STATUS_OUT_OF_RANGE = 7,
  RSRIS_STATUS_PANIC = 8,
} RsrisStatus;

// Parsed experiment configuration.
typedef struct RsrisConfig RsrisConfig;

// Outcome of an experiment run.
typedef struct RsrisResult RsrisResult;

// One aggregated row of a result table.
typedef struct RsrisRow {
  double sweep_value;
  double mean;
  double std_error;
  size_t n;
  size_t trials;
  size_t failures;
} RsrisRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rsris_version(void);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *rsris_last_error_message(void);

// Parses and validates a TOML configuration.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum RsrisStatus rsris_config_from_toml(const char *text, struct RsrisConfig **out);

// Overrides the trial count.
//
// # Safety
// `cfg` must come from [`rsris_config_from_toml`].
enum RsrisStatus rsris_config_set_trials(struct RsrisConfig *cfg, size_t trials);

// Overrides the worker thread count (0 uses every core).
//
// # Safety
// `cfg` must come from [`rsris_config_from_toml`].
enum RsrisStatus rsris_config_set_threads(struct RsrisConfig *cfg, size_t threads);

// Releases a configuration; null is ignored.
//
// # Safety
// `cfg` must come from [`rsris_config_from_toml`] and not be used afterwards.
void rsris_config_free(struct RsrisConfig *cfg);

// Runs every scheme, sweep point and trial of the configuration.
//
// # Safety
// `cfg` must come from [`rsris_config_from_toml`] and `out` be a valid pointer.
enum RsrisStatus rsris_run_experiment(const struct RsrisConfig *cfg, struct RsrisResult **out);

// Number of aggregated rows; 0 for null.
//
// # Safety
// `res` must be null or come from [`rsris_run_experiment`].
size_t rsris_result_num_rows(const struct RsrisResult *res);

// Copies row `index` into `out`.
//
// # Safety
// `res` must come from [`rsris_run_experiment`] and `out` be a valid pointer.
enum RsrisStatus rsris_result_row(const struct RsrisResult *res,
                                  size_t index,
                                  struct RsrisRow *out);

// Scheme label of row `index`, owned by the result; null when out of range.
//
// # Safety
// `res` must be null or come from [`rsris_run_experiment`].
const char *rsris_result_scheme(const struct RsrisResult *res, size_t index);

// Plot data as CSV text; release with [`rsris_string_free`].
//
// # Safety
// `res` must come from [`rsris_run_experiment`] and `out` be a valid pointer.
enum RsrisStatus rsris_result_to_csv(const struct RsrisResult *res, char **out);

// Writes `results.csv`, traces and `summary.json` under `dir`.
//
// # Safety
// Handles must come from this library and `dir` be a NUL-terminated path.
enum RsrisStatus rsris_write_outputs(const struct RsrisConfig *cfg,
                                     const struct RsrisResult *res,
                                     const char *dir);

// Releases a result; null is ignored.
//
// # Safety
// `res` must come from [`rsris_run_experiment`] and not be used afterwards.
void rsris_result_free(struct RsrisResult *res);

// Releases a string returned by this library; null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void rsris_string_free(char *s);

// Image rejection ratio `|mu|^2 / |nu|^2` of an I/Q-imbalanced branch
// (infinite for ideal hardware).
//
// # Safety
// `out` must be a valid pointer.
enum RsrisStatus rsris_image_rejection_ratio(double epsilon, double phi, double *out);

// Widely linear coefficients `mu`, `nu` as `[re, im]` pairs.
//
// # Safety
// `mu` and `nu` must each point to two writable doubles.
enum RsrisStatus rsris_iqi_coefficients(double epsilon, double phi, double *mu, double *nu);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSRIS_H */
