#ifndef CRASHLEARN_H
#define CRASHLEARN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible function.
 */
typedef enum CLStatus {
  CL_STATUS_OK = 0,
  CL_STATUS_NULL_POINTER = 1,
  CL_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed or inconsistent graph, model, config or trace.
   */
  CL_STATUS_INVALID_INPUT = 3,
  CL_STATUS_IO = 4,
  /**
   * An exhaustive enumeration exceeded its budget.
   */
  CL_STATUS_BUDGET = 5,
  /**
   * The run could not complete (deadlock, failed precondition).
   */
  CL_STATUS_EXECUTION = 6,
  /**
   * Index outside the valid range.
   */
  CL_STATUS_OUT_OF_RANGE = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  CL_STATUS_PANIC = 8,
} CLStatus;

/**
 * Simulation config with its graph and model resolved.
 */
typedef struct CLConfig CLConfig;

/**
 * Directed communication graph.
 */
typedef struct CLGraph CLGraph;

/**
 * Per-agent likelihood model.
 */
typedef struct CLModel CLModel;

/**
 * Recorded execution.
 */
typedef struct CLTrace CLTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *cl_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cl_string_free(char *s);

/**
 * Parses a graph from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CLStatus cl_graph_from_json(const char *json, struct CLGraph **out);

/**
 * Loads a graph file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CLStatus cl_graph_load(const char *path, struct CLGraph **out);

/**
 * # Safety
 * `graph` must come from this library and not have been freed. Null is ignored.
 */
void cl_graph_free(struct CLGraph *graph);

/**
 * Number of agents in the graph, or 0 for null.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t cl_graph_node_count(const struct CLGraph *graph);

/**
 * Detectability report (reduced-graph count, smallest source size, both
 * conditions) as JSON. `max_candidates == 0` selects the default budget.
 *
 * # Safety
 * `graph` must be a live handle; `out_json` must be writable.
 */
enum CLStatus cl_graph_detect(const struct CLGraph *graph,
                              size_t f,
                              uint64_t max_candidates,
                              char **out_json);

/**
 * Parses a likelihood model from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CLStatus cl_model_from_json(const char *json, struct CLModel **out);

/**
 * Loads a likelihood model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CLStatus cl_model_load(const char *path, struct CLModel **out);

/**
 * # Safety
 * `model` must come from this library and not have been freed. Null is ignored.
 */
void cl_model_free(struct CLModel *model);

/**
 * Identifiability report for a model over the reduced graphs of `graph`,
 * as JSON.
 *
 * # Safety
 * `graph` and `model` must be live handles; `out_json` must be writable.
 */
enum CLStatus cl_identify(const struct CLGraph *graph,
                          const struct CLModel *model,
                          size_t f,
                          uint64_t max_candidates,
                          char **out_json);

/**
 * Loads a simulation config; graph and model paths resolve against the
 * config's directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CLStatus cl_config_load(const char *path, struct CLConfig **out);

/**
 * Parses a simulation config; relative graph and model paths resolve
 * against `base_dir`.
 *
 * # Safety
 * `json` and `base_dir` must be NUL-terminated strings; `out` must be writable.
 */
enum CLStatus cl_config_from_json(const char *json, const char *base_dir, struct CLConfig **out);

/**
 * # Safety
 * `config` must come from this library and not have been freed. Null is ignored.
 */
void cl_config_free(struct CLConfig *config);

/**
 * Runs one execution of `config` with the given master seed.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum CLStatus cl_simulate(const struct CLConfig *config, uint64_t seed, struct CLTrace **out);

/**
 * Reads a trace file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CLStatus cl_trace_load(const char *path, struct CLTrace **out);

/**
 * Writes a trace file (and its metadata sidecar).
 *
 * # Safety
 * `trace` must be a live handle; `path` must be a NUL-terminated string.
 */
enum CLStatus cl_trace_write(const struct CLTrace *trace, const char *path);

/**
 * # Safety
 * `trace` must come from this library and not have been freed. Null is ignored.
 */
void cl_trace_free(struct CLTrace *trace);

/**
 * Number of agents, or 0 for null.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t cl_trace_agent_count(const struct CLTrace *trace);

/**
 * Number of recorded iterations, or 0 for null.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
uint64_t cl_trace_horizon(const struct CLTrace *trace);

/**
 * Whether `agent` (0-based) is still alive at the end of the run.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum CLStatus cl_trace_survived(const struct CLTrace *trace, size_t agent, bool *out);

/**
 * Last recorded belief of `agent` (0-based) in the true hypothesis.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum CLStatus cl_trace_final_mu(const struct CLTrace *trace, size_t agent, double *out);

/**
 * Runs the selected checks (`"all"`, a comma-separated list, or `""` for
 * none) and returns the verification report as JSON. `passed` receives the
 * overall verdict; a failing check is not an error.
 *
 * # Safety
 * `trace` must be a live handle; `checks` must be a NUL-terminated string;
 * `passed` and `out_json` must be writable.
 */
enum CLStatus cl_trace_analyze(const struct CLTrace *trace,
                               const char *checks,
                               uint64_t max_candidates,
                               bool *passed,
                               char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRASHLEARN_H */
