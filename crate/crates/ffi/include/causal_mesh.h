#ifndef CAUSAL_MESH_H
#define CAUSAL_MESH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_UTF8 = 2,
  /**
   * The scenario could not be found, parsed or validated.
   */
  CM_STATUS_CONFIG = 3,
  /**
   * The run itself failed, e.g. a scripted partition.
   */
  CM_STATUS_SIMULATION = 4,
  /**
   * The call does not fit the handle's stage.
   */
  CM_STATUS_WRONG_STATE = 5,
  /**
   * A trace could not be read or replayed.
   */
  CM_STATUS_TRACE = 6,
  CM_STATUS_PANIC = 7,
} CmStatus;

typedef struct CmSimulation CmSimulation;

/**
 * Counts from a finished run.
 */
typedef struct CmSummary {
  bool clean;
  /**
   * False when the hard time limit stopped the run.
   */
  bool quiescent;
  uint64_t end_ms;
  uint64_t pending_events;
  uint64_t causal_violations;
  uint64_t duplicates;
  uint64_t missing_deliveries;
  uint64_t safe_link_breaches;
  uint64_t events;
  uint64_t broadcasts;
  uint64_t payload_sends;
  uint64_t control_bytes;
  uint64_t ping_phases;
  uint64_t retries;
  uint64_t abandoned_links;
  uint64_t max_buffer_seen;
} CmSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a handle from a scenario file path or a bundled scenario name.
 */
enum CmStatus cm_simulation_new(const char *scenario, struct CmSimulation **out);

/**
 * Creates a handle from scenario TOML text.
 */
enum CmStatus cm_simulation_from_toml(const char *toml, struct CmSimulation **out);

void cm_simulation_free(struct CmSimulation *sim);

/**
 * Overrides the scenario seed. Only valid before the first step.
 */
enum CmStatus cm_simulation_set_seed(struct CmSimulation *sim, uint64_t seed);

/**
 * Overrides the protocol ("rbroadcast", "pc" or "vc"). Only valid before
 * the first step.
 */
enum CmStatus cm_simulation_set_protocol(struct CmSimulation *sim, const char *protocol);

/**
 * Processes one event. `progressed` is set to false once nothing is left
 * to run before the hard time limit.
 */
enum CmStatus cm_simulation_step(struct CmSimulation *sim, bool *progressed);

/**
 * Processes every event scheduled at or before `time_ms`.
 */
enum CmStatus cm_simulation_run_until(struct CmSimulation *sim, uint64_t time_ms);

/**
 * Current virtual time in milliseconds; 0 before the first step.
 */
enum CmStatus cm_simulation_now(struct CmSimulation *sim, uint64_t *out);

/**
 * Runs to quiescence or the hard time limit, then checks the trace.
 */
enum CmStatus cm_simulation_run(struct CmSimulation *sim);

/**
 * Stops where the run is and checks the trace so far.
 */
enum CmStatus cm_simulation_finish(struct CmSimulation *sim);

enum CmStatus cm_simulation_summary(struct CmSimulation *sim, struct CmSummary *out);

/**
 * The sampled metrics as CSV text, header included.
 */
enum CmStatus cm_simulation_metrics_csv(struct CmSimulation *sim, char **out);

/**
 * The full trace as JSON lines, in the format `cm_verify_jsonl` reads.
 */
enum CmStatus cm_simulation_trace_jsonl(struct CmSimulation *sim, char **out);

enum CmStatus cm_simulation_verdict_json(struct CmSimulation *sim, char **out);

/**
 * Replays a JSON-lines trace through the oracle. `verdict_json` may be
 * NULL when only `clean` is wanted. Empty input is a clean trace.
 */
enum CmStatus cm_verify_jsonl(const char *jsonl, bool *clean, char **verdict_json);

/**
 * Releases a string returned by this library. NULL is ignored.
 */
void cm_string_free(char *s);

/**
 * Message for the most recent failure on this thread, or NULL. Valid
 * until the next failing call on the same thread.
 */
const char *cm_last_error(void);

const char *cm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAUSAL_MESH_H */
