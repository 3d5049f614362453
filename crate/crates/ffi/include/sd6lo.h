#ifndef SD6LO_H
#define SD6LO_H

/* Generated by cbindgen from the sd6lo-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which protocol stack to simulate.
typedef enum Sd6loMode {
  SD6LO_MODE_SDN = 0,
  SD6LO_MODE_RPL = 1,
} Sd6loMode;

// Status of an FFI call.
typedef enum Sd6loStatus {
  SD6LO_STATUS_OK = 0,
  // A required pointer argument was null.
  SD6LO_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SD6LO_STATUS_INVALID_UTF8 = 2,
  // The scenario file could not be read.
  SD6LO_STATUS_IO = 3,
  // The scenario file failed to parse or validate.
  SD6LO_STATUS_INVALID_SCENARIO = 4,
  // The simulation run failed (e.g. the output directory is not
  // writable).
  SD6LO_STATUS_RUN_FAILED = 5,
} Sd6loStatus;

// Opaque scenario handle.
typedef struct Sd6loScenario Sd6loScenario;

// Opaque run-summary handle.
typedef struct Sd6loSummary Sd6loSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Human-readable detail of the most recent failure on this thread. The
// pointer stays valid until the next failing call on the same thread.
const char *sd6lo_last_error_message(void);

// Library version as a static string.
const char *sd6lo_version(void);

// Load and validate a scenario file. On success `*out` owns the handle;
// release it with [`sd6lo_scenario_free`].
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum Sd6loStatus sd6lo_scenario_load(const char *path, struct Sd6loScenario **out);

// Release a scenario handle. Null is a no-op.
//
// # Safety
// `scenario` must be a handle from [`sd6lo_scenario_load`], not yet freed.
void sd6lo_scenario_free(struct Sd6loScenario *scenario);

// Number of nodes in the scenario; 0 for a null handle.
//
// # Safety
// `scenario` must be a live handle or null.
uint32_t sd6lo_scenario_node_count(const struct Sd6loScenario *scenario);

// Override the replica count.
//
// # Safety
// `scenario` must be a live handle or null (then a no-op).
void sd6lo_scenario_set_replicas(struct Sd6loScenario *scenario, uint32_t value);

// Override the run duration in seconds.
//
// # Safety
// `scenario` must be a live handle or null (then a no-op).
void sd6lo_scenario_set_duration_s(struct Sd6loScenario *scenario, uint32_t value);

// Override the warmup window in seconds.
//
// # Safety
// `scenario` must be a live handle or null (then a no-op).
void sd6lo_scenario_set_warmup_s(struct Sd6loScenario *scenario, uint32_t value);

// Override the base seed (replica k runs with seed base+k).
//
// # Safety
// `scenario` must be a live handle or null (then a no-op).
void sd6lo_scenario_set_base_seed(struct Sd6loScenario *scenario, uint64_t value);

// Run every replica of the scenario, writing the CSV artifacts under
// `out_dir`; on success `*out_summary` owns the aggregate results.
//
// # Safety
// `scenario` must be a live handle; `out_dir` a valid NUL-terminated
// string; `out_summary` a valid pointer.
enum Sd6loStatus sd6lo_run(const struct Sd6loScenario *scenario,
                           enum Sd6loMode mode,
                           uint32_t jobs,
                           const char *out_dir,
                           struct Sd6loSummary **out_summary);

// Release a summary handle. Null is a no-op.
//
// # Safety
// `summary` must be a handle from [`sd6lo_run`], not yet freed.
void sd6lo_summary_free(struct Sd6loSummary *summary);

// Replicas contributing to the summary.
//
// # Safety
// `summary` must be a live handle or null.
uint32_t sd6lo_summary_replicas(const struct Sd6loSummary *summary);

// Mean steady-window control bytes across replicas.
//
// # Safety
// `summary` must be a live handle or null.
double sd6lo_summary_control_bytes_mean(const struct Sd6loSummary *summary);

// Mean steady-window application round-trip time in microseconds.
//
// # Safety
// `summary` must be a live handle or null.
double sd6lo_summary_rtt_mean_us(const struct Sd6loSummary *summary);

// 95% confidence interval of the mean RTT; either output may be null.
//
// # Safety
// `summary` must be a live handle or null; outputs may be null.
void sd6lo_summary_rtt_ci95_us(const struct Sd6loSummary *summary, double *lo, double *hi);

// Total steady-window table-miss requests over all replicas.
//
// # Safety
// `summary` must be a live handle or null.
uint64_t sd6lo_summary_miss_requests_steady(const struct Sd6loSummary *summary);

// Total DAO datagrams created over all replicas (zero in SDN mode).
//
// # Safety
// `summary` must be a live handle or null.
uint64_t sd6lo_summary_dao_datagrams(const struct Sd6loSummary *summary);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SD6LO_H */
