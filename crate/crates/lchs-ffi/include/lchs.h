/* C interface to the lchs solver. Generated by cbindgen; do not edit. */

#ifndef LCHS_H
#define LCHS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call. Anything other than Ok leaves a message behind
// lchs_last_error_message.
typedef enum LchsStatus {
  LCHS_STATUS_OK = 0,
  // Malformed input: bad JSON, bad backend string, null pointer,
  // dimension mismatch.
  LCHS_STATUS_INVALID_ARGUMENT = 2,
  // The computation is well posed but exceeds a numerical budget:
  // convergence failure, overflow guard, or a solution decayed below
  // resolvable magnitude.
  LCHS_STATUS_NUMERICAL_BUDGET = 3,
  // A bug surfaced as a panic; the call did not complete.
  LCHS_STATUS_INTERNAL_ERROR = 4,
} LchsStatus;

// Parsed, validated problem. Create with lchs_problem_parse, release with
// lchs_problem_free.
typedef struct LchsProblemHandle LchsProblemHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string; do not free.
const char *lchs_version(void);

// Message for the most recent failure on this thread, or null if the last
// call succeeded. Owned by the library: valid until the next failing call
// on the same thread, never freed by the caller.
const char *lchs_last_error_message(void);

// Releases a string returned through an out-parameter. Null is a no-op.
void lchs_string_free(char *text);

// Parses a problem document (the same JSON the command-line tool reads) and
// writes a handle through `out`. On failure `out` is untouched.
enum LchsStatus lchs_problem_parse(const char *json, struct LchsProblemHandle **out);

// State-space dimension of a parsed problem.
enum LchsStatus lchs_problem_dim(const struct LchsProblemHandle *handle, size_t *out_dim);

// Releases a problem handle. Null is a no-op.
void lchs_problem_free(struct LchsProblemHandle *handle);

// Solves the problem to accuracy `eps` with the named backend ("exact",
// "trotter:p,r", or "interaction") and writes a JSON result: the final
// state, its normalization, eta, p_succ, the applied shift, the kernel grid
// summary, and operation tallies.
enum LchsStatus lchs_solve_json(const struct LchsProblemHandle *handle,
                                double eps,
                                const char *backend,
                                char **out_json);

// Shot-noise estimate of a Hermitian observable (JSON: {"dim", "matrix"})
// at the final time, to half-width eps with failure probability delta,
// deterministic in `seed`. Writes a JSON report with the value, half width,
// sample counts, and the sampling plan.
enum LchsStatus lchs_estimate_json(const struct LchsProblemHandle *handle,
                                   const char *observable_json,
                                   double eps,
                                   double delta,
                                   uint64_t seed,
                                   const char *backend,
                                   char **out_json);

// Closed-form resource counts for the problem at target accuracy eps and
// product-formula order `order`. Mode is "td" (time-dependent bounds) or
// "ti" (time-independent bounds); the absorbing-boundary mode needs grid
// parameters and lives in the command-line tool only.
enum LchsStatus lchs_plan_json(const struct LchsProblemHandle *handle,
                               double eps,
                               uint32_t order,
                               const char *mode,
                               char **out_json);

// Scalar anchor check: decay of du/dt = -u over unit time through the
// kernel quadrature with cutoff K and `intervals` intervals, against the
// closed form e^{-1}. Writes the absolute error through `out_error`.
enum LchsStatus lchs_verify_scalar(double cutoff, size_t intervals, double *out_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LCHS_H */
