#ifndef DEPENDASIM_H
#define DEPENDASIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_ARGUMENT = 1,
  DS_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration, trace, or burst table.
   */
  DS_STATUS_CONFIG = 3,
  DS_STATUS_MISSING_INPUT = 4,
  DS_STATUS_IO = 5,
  DS_STATUS_INVARIANT = 6,
  /**
   * Call not valid in the handle's current state.
   */
  DS_STATUS_STATE = 7,
  DS_STATUS_PANIC = 8,
} DsStatus;

/**
 * A simulation run: stepping until its end, then finished output.
 */
typedef struct DsSimulation DsSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *ds_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ds_version(void);

/**
 * Create a simulation from a profile (`"desk"` or `"paper"`, NULL for the
 * default) overlaid with optional `key=value` config text, then `seed`.
 * Without a configured burst-table file the table is calibrated in process.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum DsStatus ds_simulation_new(const char *profile,
                                const char *config_text,
                                uint64_t seed,
                                struct DsSimulation **out);

/**
 * Advance to `t_ns` (capped at the run end). `finished`, if not NULL,
 * receives whether the end was reached.
 *
 * # Safety
 * `sim` must come from [`ds_simulation_new`]; `finished` NULL or writable.
 */
enum DsStatus ds_simulation_run_until(struct DsSimulation *sim, uint64_t t_ns, bool *finished);

/**
 * Current simulated time and configured end, in ns.
 *
 * # Safety
 * `sim` must come from [`ds_simulation_new`]; outputs NULL or writable.
 */
enum DsStatus ds_simulation_time(const struct DsSimulation *sim,
                                 uint64_t *now_ns,
                                 uint64_t *end_ns);

/**
 * Run to the end and keep the output for summary and export. Finishing
 * twice is a no-op.
 *
 * # Safety
 * `sim` must come from [`ds_simulation_new`].
 */
enum DsStatus ds_simulation_finish(struct DsSimulation *sim);

/**
 * Summary of a finished run as a JSON string; free with [`ds_string_free`].
 *
 * # Safety
 * `sim` must come from [`ds_simulation_new`]; `out` must be writable.
 */
enum DsStatus ds_simulation_summary_json(const struct DsSimulation *sim, char **out);

/**
 * Write the metric files of a finished run into `out_dir`.
 *
 * # Safety
 * `sim` must come from [`ds_simulation_new`]; `out_dir` NUL-terminated.
 */
enum DsStatus ds_simulation_export(const struct DsSimulation *sim, const char *out_dir);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `sim` must be NULL or come from [`ds_simulation_new`], freed once.
 */
void ds_simulation_free(struct DsSimulation *sim);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void ds_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPENDASIM_H */
