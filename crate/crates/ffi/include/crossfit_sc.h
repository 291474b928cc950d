#ifndef CROSSFIT_SC_H
#define CROSSFIT_SC_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfscStatus {
  CFSC_STATUS_OK = 0,
  CFSC_STATUS_NULL_POINTER = 1,
  CFSC_STATUS_INVALID_ARGUMENT = 2,
  CFSC_STATUS_IO = 3,
  /*
   Fold estimates coincide; the result handle is still produced but
   carries NaN for every variance-dependent field.
   */
  CFSC_STATUS_DEGENERATE_VARIANCE = 4,
  CFSC_STATUS_NUMERIC = 5,
  CFSC_STATUS_PANIC = 6,
} CfscStatus;

typedef enum CfscMethod {
  CFSC_METHOD_SC = 0,
  CFSC_METHOD_CL = 1,
  CFSC_METHOD_MCL = 2,
  CFSC_METHOD_DID = 3,
} CfscMethod;

/*
 Opaque panel handle.
 */
typedef struct CfscPanel CfscPanel;

/*
 Opaque cross-fit result handle.
 */
typedef struct CfscResult CfscResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next library call on the same thread.
 */
const char *cfsc_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *cfsc_version(void);

/*
 Loads a wide CSV panel (first column time labels, one column per unit).

 # Safety
 `path` and `treated` must be NUL-terminated strings; `out` must be a
 valid pointer to writable storage.
 */
enum CfscStatus cfsc_panel_from_csv(const char *path,
                                    const char *treated,
                                    size_t t0,
                                    struct CfscPanel **out);

/*
 Builds a panel from raw arrays: `treated` has `periods` entries and
 `controls` is `periods x n_controls` in column-major order.

 # Safety
 The arrays must hold at least the stated number of doubles; `out` must
 be a valid pointer to writable storage.
 */
enum CfscStatus cfsc_panel_from_data(const double *treated,
                                     const double *controls,
                                     size_t periods,
                                     size_t n_controls,
                                     size_t t0,
                                     struct CfscPanel **out);

/*
 Number of periods, or 0 for a null handle.

 # Safety
 `panel` must be null or a live handle.
 */
size_t cfsc_panel_periods(const struct CfscPanel *panel);

/*
 Number of control units, or 0 for a null handle.

 # Safety
 `panel` must be null or a live handle.
 */
size_t cfsc_panel_n_controls(const struct CfscPanel *panel);

/*
 # Safety
 `panel` must be null or a handle not yet freed.
 */
void cfsc_panel_free(struct CfscPanel *panel);

/*
 Cross-fitted ATT estimate. Pass NaN for `q` to use the method default.
 On `CfscStatus::DegenerateVariance` a result is still written to `out`.

 # Safety
 `panel` must be a live handle and `out` valid writable storage.
 */
enum CfscStatus cfsc_crossfit(const struct CfscPanel *panel,
                              enum CfscMethod method,
                              size_t k,
                              double alpha,
                              double q,
                              double tau0,
                              struct CfscResult **out);

/*
 Pooled ATT, or NaN for a null handle.

 # Safety
 `res` must be null or a live handle.
 */
double cfsc_result_att(const struct CfscResult *res);

/*
 Scale estimate; NaN when degenerate.

 # Safety
 `res` must be null or a live handle.
 */
double cfsc_result_sigma_hat(const struct CfscResult *res);

/*
 Two-sided p-value for the null `tau = tau0`; NaN when degenerate.

 # Safety
 `res` must be null or a live handle.
 */
double cfsc_result_p_value(const struct CfscResult *res);

/*
 Writes the interval bounds; both NaN when degenerate.

 # Safety
 `res` must be null or a live handle; `lo` and `hi` valid writable doubles.
 */
enum CfscStatus cfsc_result_ci(const struct CfscResult *res, double *lo, double *hi);

/*
 Result as a JSON object; free with [`cfsc_string_free`]. Null on error.

 # Safety
 `res` must be null or a live handle.
 */
char *cfsc_result_to_json(const struct CfscResult *res);

/*
 # Safety
 `res` must be null or a handle not yet freed.
 */
void cfsc_result_free(struct CfscResult *res);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void cfsc_string_free(char *s);

/*
 Student-t CDF.

 # Safety
 `out` must be a valid writable double.
 */
enum CfscStatus cfsc_t_cdf(double x, uint32_t df, double *out);

/*
 Student-t quantile.

 # Safety
 `out` must be a valid writable double.
 */
enum CfscStatus cfsc_t_quantile(double p, uint32_t df, double *out);

/*
 Limiting expected length of the `1 - alpha` interval with `K` folds.

 # Safety
 `out` must be a valid writable double.
 */
enum CfscStatus cfsc_expected_ci_length(size_t k,
                                        double alpha,
                                        double c0,
                                        double sigma,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSFIT_SC_H */
