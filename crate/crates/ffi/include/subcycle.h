#ifndef SUBCYCLE_H
#define SUBCYCLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_ARGUMENT = 2,
  SC_STATUS_CONFIG = 3,
  SC_STATUS_SEQUENCE = 4,
  SC_STATUS_RENDER = 5,
  SC_STATUS_MODEL = 6,
  SC_STATUS_FIT = 7,
  SC_STATUS_IO = 8,
  SC_STATUS_OUT_OF_RANGE = 9,
  SC_STATUS_PANIC = 10,
} ScStatus;

typedef enum ScSpinStatus {
  SC_SPIN_STATUS_FITTED = 0,
  SC_SPIN_STATUS_REJECTED = 1,
  SC_SPIN_STATUS_LINEAR_ONLY = 2,
} ScSpinStatus;

typedef struct ScClock ScClock;

typedef struct ScExperiment ScExperiment;

typedef struct ScFitReport ScFitReport;

typedef struct ScProgram ScProgram;

typedef struct ScTrace ScTrace;

/**
 * One row of a fit report. Frequencies in kHz.
 */
typedef struct ScSpinEstimate {
  double a_khz;
  double a_err_khz;
  double b_khz;
  double b_err_khz;
  double linear_a_khz;
  double chi2_red;
  uint32_t windows_used;
  enum ScSpinStatus status;
} ScSpinEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the size needed including the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t sc_last_error_message(char *buf, size_t len);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum ScStatus sc_clock_new(uint64_t dac_rate_hz,
                           uint64_t seq_rate_hz,
                           uint32_t pulse_overhead_cycles,
                           struct ScClock **out);

/**
 * # Safety
 * `clock` must be null or a handle from [`sc_clock_new`] not yet freed.
 */
void sc_clock_free(struct ScClock *clock);

/**
 * Split a delay in DAC samples into sequencer cycles and a fine remainder.
 *
 * # Safety
 * `clock` must be a live handle; `coarse` and `fine` valid for writes.
 */
enum ScStatus sc_clock_decompose(const struct ScClock *clock,
                                 uint64_t delay_samples,
                                 uint64_t *coarse,
                                 uint32_t *fine);

/**
 * # Safety
 * `clock` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_clock_recompose(const struct ScClock *clock,
                                 uint64_t coarse,
                                 uint32_t fine,
                                 uint64_t *out);

/**
 * Load an experiment config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum ScStatus sc_experiment_load(const char *path, struct ScExperiment **out);

/**
 * Parse an experiment config from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` valid for writes.
 */
enum ScStatus sc_experiment_parse(const char *text, struct ScExperiment **out);

/**
 * # Safety
 * `exp` must be null or a live experiment handle.
 */
void sc_experiment_free(struct ScExperiment *exp);

/**
 * Number of sweep points.
 *
 * # Safety
 * `exp` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_experiment_point_count(const struct ScExperiment *exp, size_t *out);

/**
 * Build and compile sweep point `index`.
 *
 * # Safety
 * `exp` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_experiment_compile(const struct ScExperiment *exp,
                                    size_t index,
                                    struct ScProgram **out);

/**
 * Compile, render and measure every sweep point; `max_error` receives the
 * largest |measured - predicted| pulse start in samples.
 *
 * # Safety
 * `exp` must be a live handle; `max_error` valid for writes.
 */
enum ScStatus sc_experiment_verify(const struct ScExperiment *exp, uint64_t *max_error);

/**
 * # Safety
 * `prog` must be null or a live program handle.
 */
void sc_program_free(struct ScProgram *prog);

/**
 * Copy up to `len` predicted pulse starts into `buf`; `count` receives the
 * total number available.
 *
 * # Safety
 * `prog` must be a live handle; `buf` null or valid for `len` writes;
 * `count` valid for writes.
 */
enum ScStatus sc_program_predicted_edges(const struct ScProgram *prog,
                                         uint64_t *buf,
                                         size_t len,
                                         size_t *count);

/**
 * Render the program and copy up to `len` measured pulse starts into `buf`.
 *
 * # Safety
 * As for [`sc_program_predicted_edges`].
 */
enum ScStatus sc_program_measured_edges(const struct ScProgram *prog,
                                        double threshold,
                                        uint64_t *buf,
                                        size_t len,
                                        size_t *count);

/**
 * Closed-form single-nucleus CPMG signal. Couplings in kHz, field in gauss.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ScStatus sc_px_analytic(double a_khz,
                             double b_khz,
                             double b_field_gauss,
                             double tau_s,
                             uint32_t n_pulses,
                             double *out);

/**
 * Synthetic trace for the experiment's sweep; `seed` replaces `noise.seed`.
 *
 * # Safety
 * `exp` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_trace_simulate(const struct ScExperiment *exp,
                                uint64_t seed,
                                struct ScTrace **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum ScStatus sc_trace_read_csv(const char *path, struct ScTrace **out);

/**
 * # Safety
 * `trace` must be a live handle; `path` a NUL-terminated string.
 */
enum ScStatus sc_trace_write_csv(const struct ScTrace *trace, const char *path);

/**
 * # Safety
 * `trace` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_trace_len(const struct ScTrace *trace, size_t *out);

/**
 * # Safety
 * `trace` must be a live handle; the three outputs valid for writes.
 */
enum ScStatus sc_trace_point(const struct ScTrace *trace,
                             size_t index,
                             double *tau_s,
                             double *px,
                             double *px_err);

/**
 * # Safety
 * `trace` must be null or a live trace handle.
 */
void sc_trace_free(struct ScTrace *trace);

/**
 * Run the fit pipeline with the experiment's field, pulse count and fit settings.
 *
 * # Safety
 * `exp` and `trace` must be live handles; `out` valid for writes.
 */
enum ScStatus sc_fit(const struct ScExperiment *exp,
                     const struct ScTrace *trace,
                     struct ScFitReport **out);

/**
 * # Safety
 * `report` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_fit_spin_count(const struct ScFitReport *report, size_t *out);

/**
 * # Safety
 * `report` must be a live handle; `out` valid for writes.
 */
enum ScStatus sc_fit_spin(const struct ScFitReport *report,
                          size_t index,
                          struct ScSpinEstimate *out);

/**
 * # Safety
 * `report` must be null or a live report handle.
 */
void sc_fit_free(struct ScFitReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBCYCLE_H */
