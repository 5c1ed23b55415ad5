#ifndef OCP_FBDE_H
#define OCP_FBDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OcpStatus {
  OCP_STATUS_OK = 0,
  OCP_STATUS_IO = 1,
  // The call finished and produced a result, but the solver did not converge.
  OCP_STATUS_NOT_CONVERGED = 2,
  OCP_STATUS_INVALID_INPUT = 3,
  OCP_STATUS_NUMERICAL_FAILURE = 4,
  OCP_STATUS_NULL_POINTER = 5,
  OCP_STATUS_PANIC = 6,
  OCP_STATUS_BUFFER_TOO_SMALL = 7,
} OcpStatus;

// States and controls of a solve or closed-loop run, one row per step.
typedef struct OcpResult OcpResult;

// A parsed and validated scenario.
typedef struct OcpScenario OcpScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or NULL. Valid until the next call
// into this library from the same thread.
const char *ocp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ocp_version(void);

// Parses a scenario from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum OcpStatus ocp_scenario_from_json(const char *json, struct OcpScenario **out);

// Reads and parses a scenario file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OcpStatus ocp_scenario_load(const char *path, struct OcpScenario **out);

// # Safety
// `scenario` must come from `ocp_scenario_from_json` or `ocp_scenario_load`
// and not be freed yet. NULL is ignored.
void ocp_scenario_free(struct OcpScenario *scenario);

// Solves the scenario once over its full horizon. On `Ok` and
// `NotConverged`, `*out` holds a result to free with `ocp_result_free`.
//
// # Safety
// `scenario` must be a live handle and `out` a valid pointer.
enum OcpStatus ocp_solve(const struct OcpScenario *scenario, struct OcpResult **out);

// Runs the receding-horizon loop. On `Ok` and `NotConverged`, `*out` holds
// a result to free with `ocp_result_free`.
//
// # Safety
// `scenario` must be a live handle and `out` a valid pointer.
enum OcpStatus ocp_run_mpc(const struct OcpScenario *scenario, struct OcpResult **out);

// # Safety
// `result` must be a live handle or NULL (which yields 0).
size_t ocp_result_steps(const struct OcpResult *result);

// # Safety
// `result` must be a live handle or NULL (which yields 0).
size_t ocp_result_state_dim(const struct OcpResult *result);

// # Safety
// `result` must be a live handle or NULL (which yields 0).
size_t ocp_result_control_dim(const struct OcpResult *result);

// Seconds spent inside the solver.
//
// # Safety
// `result` must be a live handle or NULL (which yields NaN).
double ocp_result_solve_time(const struct OcpResult *result);

// # Safety
// `result` must be a live handle or NULL (which yields false).
bool ocp_result_converged(const struct OcpResult *result);

// Copies the states row-major, `steps × state_dim` values.
//
// # Safety
// `result` must be a live handle and `buf` must have room for `len` doubles.
enum OcpStatus ocp_result_states(const struct OcpResult *result, double *buf, size_t len);

// Copies the controls row-major, `steps × control_dim` values.
//
// # Safety
// `result` must be a live handle and `buf` must have room for `len` doubles.
enum OcpStatus ocp_result_controls(const struct OcpResult *result, double *buf, size_t len);

// # Safety
// `result` must come from `ocp_solve` or `ocp_run_mpc` and not be freed
// yet. NULL is ignored.
void ocp_result_free(struct OcpResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCP_FBDE_H */
