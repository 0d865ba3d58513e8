#ifndef REWARD_LAB_H
#define REWARD_LAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RlStatus {
  RL_STATUS_OK = 0,
  RL_STATUS_NULL_POINTER = 1,
  RL_STATUS_INVALID_UTF8 = 2,
  /**
   * A spec parameter (r_min, d_0, lambda) or the kind is out of range.
   */
  RL_STATUS_INVALID_SPEC = 3,
  /**
   * Ground truth outside [1, 5] or a non-finite prediction.
   */
  RL_STATUS_INVALID_SCORE = 4,
  /**
   * Too few values, mismatched lengths, non-finite or constant input.
   */
  RL_STATUS_INVALID_SERIES = 5,
  /**
   * A Rust panic was caught at the boundary; this is a bug.
   */
  RL_STATUS_INTERNAL = 99,
} RlStatus;

typedef enum RlRewardKind {
  RL_REWARD_KIND_L1 = 0,
  RL_REWARD_KIND_L2 = 1,
  RL_REWARD_KIND_LAPLACIAN = 2,
  RL_REWARD_KIND_GAUSSIAN = 3,
} RlRewardKind;

/**
 * Opaque reward configuration.
 */
typedef struct RlRewardSpec RlRewardSpec;

/**
 * Decomposed composite reward. `parsed_score` is meaningful only when
 * `format_ok` is true.
 */
typedef struct RlRewardBreakdown {
  bool format_ok;
  double parsed_score;
  double r_acc;
  double r_fmt;
  double r_total;
} RlRewardBreakdown;

typedef struct RlCorrelation {
  double plcc;
  double srocc;
  double main_score;
} RlCorrelation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *rl_last_error(void);

/**
 * Static NUL-terminated version string.
 */
const char *rl_version(void);

/**
 * Validates and allocates a spec. `kind` is an `RlRewardKind` value.
 * Free with `rl_reward_spec_free`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one pointer.
 */
enum RlStatus rl_reward_spec_new(uint32_t kind,
                                 double r_min,
                                 double d_0,
                                 double lambda,
                                 struct RlRewardSpec **out);

/**
 * Allocates the default spec (l1, r_min 0.05, d_0 1, lambda 1).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one pointer.
 */
enum RlStatus rl_reward_spec_default(struct RlRewardSpec **out);

/**
 * Releases a spec. NULL is a no-op.
 *
 * # Safety
 * `spec` must come from `rl_reward_spec_new`/`_default` and not be freed twice.
 */
void rl_reward_spec_free(struct RlRewardSpec *spec);

/**
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum RlStatus rl_reward_spec_kind(const struct RlRewardSpec *spec, enum RlRewardKind *out);

/**
 * Closed-form shape parameter: alpha for l1/l2, tau for laplacian, sigma
 * for gaussian.
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum RlStatus rl_derive_param(const struct RlRewardSpec *spec, double *out);

/**
 * Shaped accuracy reward in `[r_min, 1]`.
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum RlStatus rl_accuracy_reward(const struct RlRewardSpec *spec,
                                 double s_pred,
                                 double s_gt,
                                 double *out);

/**
 * Parses a think/answer response. `score` is written only when the
 * format is valid.
 *
 * # Safety
 * `text` must be a NUL-terminated string; outputs must be writable.
 */
enum RlStatus rl_parse_response(const char *text, bool *format_ok, double *score);

/**
 * Full composite reward for one response.
 *
 * # Safety
 * `spec` must be a live handle, `response` NUL-terminated, `out` writable.
 */
enum RlStatus rl_composite_reward(const struct RlRewardSpec *spec,
                                  const char *response,
                                  double s_gt,
                                  struct RlRewardBreakdown *out);

/**
 * PLCC, SROCC and their mean over `n` paired values.
 *
 * # Safety
 * `pred` and `gt` must each point to `n` readable doubles; `out` writable.
 */
enum RlStatus rl_correlation(const double *pred,
                             const double *gt,
                             size_t n,
                             struct RlCorrelation *out);

/**
 * Group-standardized advantages; `out` receives `n` values. A flat group
 * yields zeros.
 *
 * # Safety
 * `rewards` must point to `n` readable doubles and `out` to `n` writable ones.
 */
enum RlStatus rl_group_advantages(const double *rewards, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REWARD_LAB_H */
