#ifndef DPPV_H
#define DPPV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Series selectable in [`dppv_report_copy_series`].
 */
typedef enum DppvSeries {
  DPPV_SERIES_PV = 0,
  DPPV_SERIES_NOISE = 1,
  DPPV_SERIES_NET_PV = 2,
  DPPV_SERIES_REFERENCE = 3,
  DPPV_SERIES_AGGREGATE = 4,
  DPPV_SERIES_RESIDUAL = 5,
} DppvSeries;

typedef enum DppvStatus {
  DPPV_STATUS_OK = 0,
  DPPV_STATUS_NULL_POINTER = 1,
  DPPV_STATUS_INVALID_ARGUMENT = 2,
  DPPV_STATUS_CONFIG = 3,
  DPPV_STATUS_IO = 4,
  DPPV_STATUS_SOLVER_GUARD = 5,
  DPPV_STATUS_INTERNAL = 6,
} DppvStatus;

/**
 * Sampled Laplace noise.
 */
typedef struct DppvNoiseTrace DppvNoiseTrace;

/**
 * Result of one closed-loop run.
 */
typedef struct DppvReport DppvReport;

/**
 * Parsed scenario configuration.
 */
typedef struct DppvScenario DppvScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *dppv_last_error(void);

/**
 * Laplace scale `sensitivity / epsilon`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum DppvStatus dppv_laplace_scale(double epsilon, double sensitivity, double *out);

/**
 * Laplace(0, scale) density at `x`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum DppvStatus dppv_laplace_pdf(double x, double scale, double *out);

/**
 * Samples `length` noise values. Free the handle with
 * [`dppv_noise_trace_free`].
 *
 * # Safety
 * `out` must be null or point to writable memory for one pointer.
 */
enum DppvStatus dppv_noise_trace_new(double epsilon,
                                     double delta,
                                     double sensitivity,
                                     uint64_t seed,
                                     size_t length,
                                     uint32_t step_seconds,
                                     struct DppvNoiseTrace **out);

/**
 * # Safety
 * `trace` must come from [`dppv_noise_trace_new`]; `out` must be writable.
 */
enum DppvStatus dppv_noise_trace_len(const struct DppvNoiseTrace *trace, size_t *out);

/**
 * Copies the samples into `buf`, which must hold at least the trace length.
 *
 * # Safety
 * `trace` must come from [`dppv_noise_trace_new`]; `buf` must be writable
 * for `buf_len` doubles.
 */
enum DppvStatus dppv_noise_trace_copy(const struct DppvNoiseTrace *trace,
                                      double *buf,
                                      size_t buf_len);

/**
 * # Safety
 * `trace` must be null or come from [`dppv_noise_trace_new`] and not be
 * freed twice.
 */
void dppv_noise_trace_free(struct DppvNoiseTrace *trace);

/**
 * Built-in default scenario.
 *
 * # Safety
 * `out` must be null or point to writable memory for one pointer.
 */
enum DppvStatus dppv_scenario_default(struct DppvScenario **out);

/**
 * Parses a scenario from NUL-terminated UTF-8 TOML. Relative trace paths
 * resolve against the process working directory.
 *
 * # Safety
 * `toml` must be a valid C string; `out` must be writable.
 */
enum DppvStatus dppv_scenario_from_toml(const char *toml, struct DppvScenario **out);

/**
 * # Safety
 * `scenario` must be null or a live handle, freed at most once.
 */
void dppv_scenario_free(struct DppvScenario *scenario);

/**
 * Runs the closed loop in memory. Free the report with
 * [`dppv_report_free`].
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_simulate(const struct DppvScenario *scenario, struct DppvReport **out);

/**
 * Number of simulated steps.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_report_len(const struct DppvReport *report, size_t *out);

/**
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_report_n_buildings(const struct DppvReport *report, size_t *out);

/**
 * Root-mean-square tracking residual, kW.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_report_rmse(const struct DppvReport *report, double *out);

/**
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_report_max_abs_residual(const struct DppvReport *report, double *out);

/**
 * Building-steps outside the comfort band.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_report_comfort_violations(const struct DppvReport *report, size_t *out);

/**
 * Steps where some unit had no comfort-feasible action.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum DppvStatus dppv_report_infeasible_steps(const struct DppvReport *report, size_t *out);

/**
 * Copies one per-step series (length [`dppv_report_len`]) into `buf`.
 * `series` is a `DppvSeries` value.
 *
 * # Safety
 * `report` must be a live handle; `buf` must be writable for `buf_len`
 * doubles.
 */
enum DppvStatus dppv_report_copy_series(const struct DppvReport *report,
                                        uint32_t series,
                                        double *buf,
                                        size_t buf_len);

/**
 * Copies the `len + 1` temperatures of one building into `buf`.
 *
 * # Safety
 * `report` must be a live handle; `buf` must be writable for `buf_len`
 * doubles.
 */
enum DppvStatus dppv_report_copy_temperatures(const struct DppvReport *report,
                                              size_t building,
                                              double *buf,
                                              size_t buf_len);

/**
 * # Safety
 * `report` must be null or a live handle, freed at most once.
 */
void dppv_report_free(struct DppvReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPPV_H */
