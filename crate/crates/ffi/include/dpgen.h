/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef DPGEN_H
#define DPGEN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum DpgenStatus {
  DPGEN_STATUS_OK = 0,
  DPGEN_STATUS_NULL_ARGUMENT = 1,
  DPGEN_STATUS_INVALID_UTF8 = 2,
  DPGEN_STATUS_INVALID_SPEC = 3,
  DPGEN_STATUS_HORIZON_MISMATCH = 4,
  DPGEN_STATUS_NON_CONVERGENCE = 5,
  DPGEN_STATUS_SINGULAR = 6,
  DPGEN_STATUS_TOO_LARGE = 7,
  DPGEN_STATUS_INVALID_ARGUMENT = 8,
  DPGEN_STATUS_EXECUTION_FAILED = 9,
  DPGEN_STATUS_PANIC = 10,
} DpgenStatus;

typedef enum DpgenMethod {
  // Backward induction, policy iteration or relative value iteration by horizon.
  DPGEN_METHOD_AUTO = 0,
  DPGEN_METHOD_BACKWARD_INDUCTION = 1,
  DPGEN_METHOD_VALUE_ITERATION = 2,
  DPGEN_METHOD_POLICY_ITERATION = 3,
  DPGEN_METHOD_RELATIVE_VALUE_ITERATION = 4,
  DPGEN_METHOD_ENUMERATE = 5,
} DpgenMethod;

// The result of a solve.
typedef struct DpgenOutcome DpgenOutcome;

// A validated model.
typedef struct DpgenSpec DpgenSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or NULL if none.
const char *dpgen_last_error(void);

// Library version as a static NUL-terminated string.
const char *dpgen_version(void);

// Parses and validates a JSON model.
//
// # Safety
// `json` must be NULL or a NUL-terminated string; `out` must be NULL or
// writable.
enum DpgenStatus dpgen_spec_parse(const char *json, struct DpgenSpec **out_spec);

// # Safety
// `spec` must be NULL or a handle from [`dpgen_spec_parse`] not yet freed.
void dpgen_spec_free(struct DpgenSpec *spec);

// # Safety
// `spec` must be a live handle; `out_count` must be writable.
enum DpgenStatus dpgen_spec_state_count(const struct DpgenSpec *spec, size_t *out_count);

// Solves `spec` with `method`.
//
// # Safety
// `spec` must be a live handle; `out_outcome` must be writable.
enum DpgenStatus dpgen_solve(const struct DpgenSpec *spec,
                             enum DpgenMethod method,
                             struct DpgenOutcome **out_outcome);

// # Safety
// `outcome` must be NULL or a handle from [`dpgen_solve`] not yet freed.
void dpgen_outcome_free(struct DpgenOutcome *outcome);

// # Safety
// `outcome` must be a live handle; `out_value` must be writable.
enum DpgenStatus dpgen_outcome_value(const struct DpgenOutcome *outcome, double *out_value);

// # Safety
// `outcome` must be a live handle; `out_iterations` must be writable.
enum DpgenStatus dpgen_outcome_iterations(const struct DpgenOutcome *outcome,
                                          uint64_t *out_iterations);

// # Safety
// `outcome` must be a live handle; `out_residual` must be writable.
enum DpgenStatus dpgen_outcome_residual(const struct DpgenOutcome *outcome, double *out_residual);

// Value, policy and value function as JSON. Free with [`dpgen_string_free`].
//
// # Safety
// `outcome` must be a live handle; `out_json` must be writable.
enum DpgenStatus dpgen_outcome_to_json(const struct DpgenOutcome *outcome, char **out_json);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void dpgen_string_free(char *s);

// Runs a JSON model through the in-process interpreter and returns its
// answer. Scripts are not accepted over this interface.
//
// # Safety
// `json` must be NULL or NUL-terminated; `out_answer` must be writable.
enum DpgenStatus dpgen_execute_spec(const char *json, double *out_answer);

// Token-frequency cosine similarity with numbers masked, in [0, 1].
//
// # Safety
// `a` and `b` must be NULL or NUL-terminated; `out_similarity` writable.
enum DpgenStatus dpgen_text_similarity(const char *a, const char *b, double *out_similarity);

// Group-normalised advantages; writes `len` values to `out_advantages`.
//
// # Safety
// `rewards` and `out_advantages` must each point to `len` doubles.
enum DpgenStatus dpgen_grpo_advantages(const double *rewards, size_t len, double *out_advantages);

// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
double dpgen_grpo_surrogate(double ratio, double advantage, double epsilon);

// Preference loss; pass zeros for the reference terms for the
// reference-free form.
double dpgen_dpo_loss(double logp_policy_chosen,
                      double logp_policy_rejected,
                      double logp_ref_chosen,
                      double logp_ref_rejected,
                      double beta);

// Strict-plurality vote under the default tolerance. NaN entries count as
// missing answers. `out_found` is false on a tie or when nothing is present.
//
// # Safety
// `answers` must point to `len` doubles; the outputs must be writable.
enum DpgenStatus dpgen_majority_vote(const double *answers,
                                     size_t len,
                                     bool *out_found,
                                     double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPGEN_H */
