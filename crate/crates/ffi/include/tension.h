#ifndef TENSION_H
#define TENSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TensionStatus {
  TENSION_STATUS_OK = 0,
  TENSION_STATUS_NULL_POINTER = 1,
  TENSION_STATUS_INVALID_ARGUMENT = 2,
  TENSION_STATUS_CONFIG = 3,
  TENSION_STATUS_NUMERICAL = 4,
  TENSION_STATUS_BLOWUP = 5,
  TENSION_STATUS_IO = 6,
  TENSION_STATUS_PANIC = 7,
} TensionStatus;

/**
 * A heat flow built from a TOML run configuration.
 */
typedef struct TensionFlow TensionFlow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread (empty after success).
 * The pointer stays valid until the next call on this thread.
 */
const char *tension_last_error(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *tension_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void tension_string_free(char *s);

/**
 * Builds a flow from a TOML configuration with a `[mesh]`, `[target]` and
 * `[map]` table. `resolution` overrides the configured resolution when
 * non-zero.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum TensionStatus tension_flow_new(const char *toml,
                                    uint32_t resolution,
                                    struct TensionFlow **out);

/**
 * # Safety
 * `flow` must come from `tension_flow_new` and not be freed twice.
 */
void tension_flow_free(struct TensionFlow *flow);

/**
 * Takes up to `steps` explicit steps at the configured time step, ignoring
 * the stopping rules. Fails on a finished flow.
 *
 * # Safety
 * `flow` must be a live handle.
 */
enum TensionStatus tension_flow_step(struct TensionFlow *flow, uint64_t steps);

/**
 * Runs to stationarity, the time limit or blowup. `exit_code` receives
 * 0 (stationary), 2 (time limit) or 3 (blowup).
 *
 * # Safety
 * `flow` must be a live handle; `exit_code` a valid pointer.
 */
enum TensionStatus tension_flow_run(struct TensionFlow *flow, int32_t *exit_code);

/**
 * Current time, step count and sup |τ(f) − V(f)|. Any output pointer may
 * be null.
 *
 * # Safety
 * `flow` must be a live handle.
 */
enum TensionStatus tension_flow_status(const struct TensionFlow *flow,
                                       double *time,
                                       uint64_t *step,
                                       double *sup_residual);

/**
 * Node count and ambient coordinate dimension of the map.
 *
 * # Safety
 * `flow` must be a live handle; outputs valid pointers.
 */
enum TensionStatus tension_flow_shape(const struct TensionFlow *flow,
                                      size_t *nodes,
                                      size_t *ambient_dim);

/**
 * Copies the ambient coordinates (node-major) into `buf`, whose length
 * must equal nodes × ambient_dim.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum TensionStatus tension_flow_coords(const struct TensionFlow *flow, double *buf, size_t len);

/**
 * Runs one estimate check and returns the report as JSON in `json`
 * (release with `tension_string_free`). `all_pass` receives whether every
 * required row passed; it may be null.
 *
 * # Safety
 * `id` must be NUL-terminated; `json` a valid pointer.
 */
enum TensionStatus tension_verify(const char *id,
                                  uint32_t resolution,
                                  uint64_t seed,
                                  uint32_t scenarios,
                                  bool *all_pass,
                                  char **json);

/**
 * First Dirichlet eigenvalue of −Δ on a box with side `lengths[i]` and
 * `nodes[i]` grid nodes per axis (boundary included), dim 1 or 2.
 *
 * # Safety
 * `lengths` and `nodes` must point to `dim` values.
 */
enum TensionStatus tension_dirichlet_eigenvalue(const double *lengths,
                                                const size_t *nodes,
                                                size_t dim,
                                                double *lambda);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TENSION_H */
