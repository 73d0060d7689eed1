#ifndef QFI_GRAPE_H
#define QFI_GRAPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>


// Outcome code for fallible calls.
typedef enum {
  QFG_STATUS_OK = 0,
  // A required pointer argument was null.
  QFG_STATUS_NULL_ARGUMENT = 1,
  // Arguments were readable but invalid (wrong length, bad UTF-8, ...).
  QFG_STATUS_INVALID_ARGUMENT = 2,
  // The underlying computation reported an error; see qfg_last_error.
  QFG_STATUS_RUNTIME_ERROR = 3,
  // A panic was caught at the boundary; see qfg_last_error.
  QFG_STATUS_PANICKED = 4,
} QfgStatus;

// Opaque run configuration handle.
typedef struct QfgConfig QfgConfig;

// Opaque simulated-sensor handle.
typedef struct QfgSensor QfgSensor;

// Opaque optimization trace handle.
typedef struct QfgTrace QfgTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none.
// Borrowed; valid until the next failing call on the same thread.
const char *qfg_last_error(void);

// Library version string. Borrowed; do not free.
const char *qfg_version(void);

// Releases a string returned by this library as `char*`.
//
// # Safety
// `s` must be a pointer previously returned by a qfg function documented to
// transfer ownership, or null.
void qfg_string_free(char *s);

// The built-in two-qubit configuration with the full noise stack.
QfgConfig *qfg_config_preset_paper_2q(void);

// Parses a configuration from JSON. Returns null on error.
//
// # Safety
// `json` must be a valid NUL-terminated string.
QfgConfig *qfg_config_from_json(const char *json);

// Serializes a configuration to JSON. Caller frees with qfg_string_free.
//
// # Safety
// `config` must be a live handle from this library or null.
char *qfg_config_to_json(const QfgConfig *config);

// Sets the root seed used by every run on this configuration.
//
// # Safety
// `config` must be a live handle from this library or null.
QfgStatus qfg_config_set_seed(QfgConfig *config, uint64_t seed);

// Sets how many sensor runs back each reported QFI statistic.
//
// # Safety
// `config` must be a live handle from this library or null.
QfgStatus qfg_config_set_repeats(QfgConfig *config, size_t repeats);

// Releases a configuration handle.
//
// # Safety
// `config` must be a live handle from this library or null; it must not be
// used afterwards.
void qfg_config_free(QfgConfig *config);

// Ideal-model gradient ascent. Returns null on error.
//
// # Safety
// `config` must be a live handle from this library or null.
QfgTrace *qfg_run_grape(const QfgConfig *config);

// Ideal-model optimization replayed on the configured noisy sensor.
// Returns null on error.
//
// # Safety
// `config` must be a live handle from this library or null.
QfgTrace *qfg_run_grape_exp(const QfgConfig *config);

// Closed-loop optimization on the configured noisy sensor.
// Returns null on error.
//
// # Safety
// `config` must be a live handle from this library or null.
QfgTrace *qfg_run_hqc_grape(const QfgConfig *config);

// Number of trace rows (accepted and rejected, initial row included).
//
// # Safety
// `trace` must be a live handle from this library or null.
size_t qfg_trace_len(const QfgTrace *trace);

// Reported QFI of the final accepted controls; NaN for a null handle.
//
// # Safety
// `trace` must be a live handle from this library or null.
double qfg_trace_final_qfi(const QfgTrace *trace);

// Copies the per-row reported QFI values into `out` (capacity `cap`).
// Returns the number of values written.
//
// # Safety
// `trace` must be a live handle or null; `out` must point to at least `cap`
// doubles unless `cap` is 0.
size_t qfg_trace_qfi_series(const QfgTrace *trace, double *out, size_t cap);

// Control-grid shape of the final controls.
//
// # Safety
// `trace` must be a live handle or null; `k_out`/`m_out` may be null.
QfgStatus qfg_trace_controls_shape(const QfgTrace *trace, size_t *k_out, size_t *m_out);

// Copies the final control amplitudes row-major (line-by-line) into `out`.
// Returns the number of values written (k*m when `cap` suffices).
//
// # Safety
// `trace` must be a live handle or null; `out` must point to at least `cap`
// doubles unless `cap` is 0.
size_t qfg_trace_final_controls(const QfgTrace *trace, double *out, size_t cap);

// Releases a trace handle.
//
// # Safety
// `trace` must be a live handle from this library or null; it must not be
// used afterwards.
void qfg_trace_free(QfgTrace *trace);

// A sensor over the configured system and noise model, with its own stream.
// Returns null on error.
//
// # Safety
// `config` must be a live handle from this library or null.
QfgSensor *qfg_sensor_new(const QfgConfig *config, uint64_t seed);

// One noisy evolution and measurement of the pulse given as `k*m` row-major
// amplitudes; writes the normalized QFI estimate to `out_qfi`.
//
// # Safety
// `sensor` must be a live handle or null; `amplitudes` must point to `len`
// doubles; `out_qfi` must be writable or null.
QfgStatus qfg_sensor_measure_qfi(QfgSensor *sensor,
                                 const double *amplitudes,
                                 size_t len,
                                 double *out_qfi);

// Total sensor evolutions consumed so far.
//
// # Safety
// `sensor` must be a live handle from this library or null.
uint64_t qfg_sensor_evolutions_used(const QfgSensor *sensor);

// Releases a sensor handle.
//
// # Safety
// `sensor` must be a live handle from this library or null; it must not be
// used afterwards.
void qfg_sensor_free(QfgSensor *sensor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QFI_GRAPE_H */
