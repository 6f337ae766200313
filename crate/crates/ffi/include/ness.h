#ifndef NESS_H
#define NESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the nonzero error classes match the CLI exit codes.
typedef enum NessStatus {
  NESS_STATUS_OK = 0,
  NESS_STATUS_CONFIG = 2,
  NESS_STATUS_DATA = 3,
  NESS_STATUS_NUMERIC = 4,
  NESS_STATUS_NULL_POINTER = 10,
  NESS_STATUS_INTERNAL = 11,
} NessStatus;

// Streaming input covariance for one layer.
typedef struct NessAccumulator NessAccumulator;

// Frozen null basis `U` and its trainable factor `V`.
typedef struct NessAdapter NessAdapter;

// Aggregated result of a multi-seed run.
typedef struct NessReport NessReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *ness_last_error(void);

// Library version as a static string.
const char *ness_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void ness_string_free(char *s);

// # Safety
// `out` must be a valid pointer.
enum NessStatus ness_accumulator_new(size_t dim, struct NessAccumulator **out);

// Adds `rows` samples of length `dim` (row-major).
//
// # Safety
// `data` must point to `rows * dim` doubles.
enum NessStatus ness_accumulator_push(struct NessAccumulator *acc, const double *data, size_t rows);

// `‖X‖_F` of everything pushed so far.
//
// # Safety
// `acc` must be a live handle and `out` valid.
enum NessStatus ness_accumulator_frobenius(const struct NessAccumulator *acc, double *out);

// Number of samples pushed so far.
//
// # Safety
// `acc` must be a live handle or null.
size_t ness_accumulator_samples(const struct NessAccumulator *acc);

// # Safety
// `acc` must come from [`ness_accumulator_new`] and not be freed twice.
void ness_accumulator_free(struct NessAccumulator *acc);

// Builds a zero-initialized adapter for a layer with `d_out` outputs from
// the accumulated inputs.
//
// # Safety
// `acc` must be a live handle and `out` valid.
enum NessStatus ness_adapter_new(const struct NessAccumulator *acc,
                                 double eps1,
                                 size_t d_out,
                                 struct NessAdapter **out);

// Columns of `U`; zero when no direction fell below the threshold.
//
// # Safety
// `a` must be a live handle or null.
size_t ness_adapter_rank(const struct NessAdapter *a);

// Copies `U` (`d_in × rank`, row-major) into `buf` of length `len`.
//
// # Safety
// `buf` must hold `len` doubles.
enum NessStatus ness_adapter_basis(const struct NessAdapter *a, double *buf, size_t len);

// Replaces `V` (`rank × d_out`, row-major).
//
// # Safety
// `data` must hold `rank * d_out` doubles.
enum NessStatus ness_adapter_set_v(struct NessAdapter *a, const double *data, size_t len);

// Writes `W + U·V` into `out`, where `w` is `d_in × d_out` row-major.
//
// # Safety
// `w` and `out` must each hold `len` doubles.
enum NessStatus ness_adapter_merge(const struct NessAdapter *a,
                                   const double *w,
                                   double *out,
                                   size_t len);

// # Safety
// `a` must come from [`ness_adapter_new`] and not be freed twice.
void ness_adapter_free(struct NessAdapter *a);

// Mean of the last row of a `tasks × tasks` row-major accuracy matrix
// (entries above the diagonal are ignored).
//
// # Safety
// `values` must hold `tasks * tasks` doubles; `out` must be valid.
enum NessStatus ness_compute_acc(const double *values, size_t tasks, double *out);

// Backward transfer of a row-major accuracy matrix; needs two tasks.
//
// # Safety
// `values` must hold `tasks * tasks` doubles; `out` must be valid.
enum NessStatus ness_compute_bwt(const double *values, size_t tasks, double *out);

// Runs every seed of a TOML run config.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` valid.
enum NessStatus ness_run(const char *config_toml, struct NessReport **out);

// Mean and standard deviation of ACC over successful seeds.
//
// # Safety
// `r` must be a live handle; `mean` and `std` valid.
enum NessStatus ness_report_acc(const struct NessReport *r, double *mean, double *std);

// Mean and standard deviation of BWT; a data error for single-task suites.
//
// # Safety
// `r` must be a live handle; `mean` and `std` valid.
enum NessStatus ness_report_bwt(const struct NessReport *r, double *mean, double *std);

// The report as JSON; free with [`ness_string_free`].
//
// # Safety
// `r` must be a live handle and `out` valid.
enum NessStatus ness_report_json(const struct NessReport *r, char **out);

// Writes the per-seed CSVs and `summary.json` into `dir`.
//
// # Safety
// `r` must be a live handle and `dir` a NUL-terminated path.
enum NessStatus ness_report_write(const struct NessReport *r, const char *dir);

// # Safety
// `r` must come from [`ness_run`] and not be freed twice.
void ness_report_free(struct NessReport *r);

// Generates a preset synthetic suite (`rotated-gaussians`,
// `permuted-features` or `split-classes`) and writes it in suite-file format.
//
// # Safety
// `kind` and `path` must be NUL-terminated strings.
enum NessStatus ness_gen_tasks(const char *kind, uint64_t seed, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NESS_H */
