#ifndef CTRLINV_H
#define CTRLINV_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum CtrlinvStatus {
  CTRLINV_STATUS_OK = 0,
  CTRLINV_STATUS_NULL_POINTER = 1,
  CTRLINV_STATUS_INVALID_INPUT = 2,
  CTRLINV_STATUS_NOT_INVARIANT = 3,
  CTRLINV_STATUS_NUMERICAL = 4,
  CTRLINV_STATUS_PANIC = 5,
} CtrlinvStatus;

typedef enum CtrlinvVerdict {
  CTRLINV_VERDICT_INVARIANT = 0,
  CTRLINV_VERDICT_NOT_INVARIANT = 1,
  CTRLINV_VERDICT_INCONCLUSIVE_SINGULAR = 2,
} CtrlinvVerdict;

/*
 A synthesized feedback pair, evaluated in input coordinates.
 */
typedef struct CtrlinvFeedback CtrlinvFeedback;

/*
 A validated system description.
 */
typedef struct CtrlinvSystem CtrlinvSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Parse and validate a JSON system description.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CtrlinvStatus ctrlinv_system_from_json(const char *json, struct CtrlinvSystem **out);

/*
 # Safety
 `system` must come from `ctrlinv_system_from_json` or be null.
 */
void ctrlinv_system_free(struct CtrlinvSystem *system);

/*
 State dimension, distribution rank and number of controls.

 # Safety
 `system` must be a live handle; the outputs must be valid pointers.
 */
enum CtrlinvStatus ctrlinv_system_dims(const struct CtrlinvSystem *system,
                                       size_t *n,
                                       size_t *k,
                                       size_t *m);

/*
 Invariance test on a grid with `nodes_per_axis` nodes (0 uses the
 description's grid) and relative tolerance `tol` (non-positive uses the
 default).

 # Safety
 `system` must be a live handle and `verdict` a valid pointer.
 */
enum CtrlinvStatus ctrlinv_check(const struct CtrlinvSystem *system,
                                 size_t nodes_per_axis,
                                 double tol,
                                 enum CtrlinvVerdict *verdict);

/*
 Synthesize feedback for an invariant system. Fails with
 `CTRLINV_STATUS_NOT_INVARIANT` unless the verdict is invariant.

 # Safety
 `system` must be a live handle and `out` a valid pointer.
 */
enum CtrlinvStatus ctrlinv_synthesize(const struct CtrlinvSystem *system,
                                      size_t nodes_per_axis,
                                      struct CtrlinvFeedback **out);

/*
 # Safety
 `feedback` must come from `ctrlinv_synthesize` or be null.
 */
void ctrlinv_feedback_free(struct CtrlinvFeedback *feedback);

/*
 Evaluate `α(q)` (length `m`) and `β(q)` (`m × m`, row-major) at a point
 `q` of length `n` in input coordinates.

 # Safety
 `q` must hold `n` doubles, `alpha` room for `m` and `beta` for `m * m`.
 */
enum CtrlinvStatus ctrlinv_feedback_eval(const struct CtrlinvFeedback *feedback,
                                         const double *q,
                                         size_t n,
                                         double *alpha,
                                         double *beta);

/*
 Run the whole pipeline on a JSON description and return the report as
 JSON. `exit_code` receives the command-line exit status of the verdict.
 Returns null on error.

 # Safety
 `json` must be a NUL-terminated string; `exit_code` may be null.
 */
char *ctrlinv_run_json(const char *json, bool simulate, int32_t *exit_code);

/*
 # Safety
 `s` must come from this library or be null.
 */
void ctrlinv_string_free(char *s);

/*
 Message for the last failed call on this thread; empty after success.
 Valid until the next call into the library on the same thread.
 */
const char *ctrlinv_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTRLINV_H */
