#ifndef MSNAR_H
#define MSNAR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum MsnarStatus {
  MSNAR_STATUS_OK = 0,
  MSNAR_STATUS_NULL_POINTER = 1,
  MSNAR_STATUS_INVALID_ARGUMENT = 2,
  MSNAR_STATUS_NUMERICAL = 3,
  MSNAR_STATUS_BUFFER_TOO_SMALL = 4,
  MSNAR_STATUS_PANIC = 5,
} MsnarStatus;

/**
 * Model specification handle.
 */
typedef struct MsnarModel MsnarModel;

/**
 * Per-regime regression estimates on a grid.
 */
typedef struct MsnarThetaField MsnarThetaField;

/**
 * Observation sequence, with regimes when known.
 */
typedef struct MsnarTrajectory MsnarTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *msnar_last_error(void);

/**
 * The two-regime bump/logistic preset.
 */
enum MsnarStatus msnar_model_preset(struct MsnarModel **out);

/**
 * Parses a model from its JSON description.
 */
enum MsnarStatus msnar_model_from_json(const char *json, struct MsnarModel **out);

void msnar_model_free(struct MsnarModel *model);

enum MsnarStatus msnar_model_regimes(const struct MsnarModel *model, size_t *out);

/**
 * Spectral radius of the order-`s` moment matrix and the overall verdict
 * (`*stable` is 1 when both stability conditions hold).
 */
enum MsnarStatus msnar_check_stability(const struct MsnarModel *model,
                                       double s,
                                       double *spectral_radius,
                                       int *stable);

/**
 * Simulates `n` transitions after discarding `burn_in` steps started at zero.
 */
enum MsnarStatus msnar_simulate(const struct MsnarModel *model,
                                size_t n,
                                uint64_t seed,
                                size_t burn_in,
                                struct MsnarTrajectory **out);

/**
 * Builds a trajectory from `len` observations. `regimes` may be null; otherwise
 * it holds `len - 1` zero-based labels for steps `1..len`.
 */
enum MsnarStatus msnar_trajectory_from_values(const double *y,
                                              size_t len,
                                              const size_t *regimes,
                                              struct MsnarTrajectory **out);

void msnar_trajectory_free(struct MsnarTrajectory *traj);

/**
 * Number of observations `n + 1`.
 */
enum MsnarStatus msnar_trajectory_len(const struct MsnarTrajectory *traj, size_t *out);

enum MsnarStatus msnar_trajectory_values(const struct MsnarTrajectory *traj,
                                         double *out,
                                         size_t capacity);

/**
 * Zero-based regimes of steps `1..len`; fails when they are hidden.
 */
enum MsnarStatus msnar_trajectory_regimes(const struct MsnarTrajectory *traj,
                                          size_t *out,
                                          size_t capacity);

/**
 * Complete-data estimate on the default grid. A non-positive `bandwidth`
 * selects the default rule.
 */
enum MsnarStatus msnar_nw_estimate(const struct MsnarTrajectory *traj,
                                   size_t m,
                                   double bandwidth,
                                   struct MsnarThetaField **out);

/**
 * Restoration-estimation with hidden regimes; returns the averaged estimate.
 * Any regimes stored in the trajectory are ignored.
 */
enum MsnarStatus msnar_rm_estimate(const struct MsnarTrajectory *traj,
                                   size_t m,
                                   uint64_t seed,
                                   size_t warmup,
                                   size_t iterations,
                                   double bandwidth,
                                   struct MsnarThetaField **out);

void msnar_field_free(struct MsnarThetaField *field);

enum MsnarStatus msnar_field_grid_len(const struct MsnarThetaField *field, size_t *out);

enum MsnarStatus msnar_field_regimes(const struct MsnarThetaField *field, size_t *out);

enum MsnarStatus msnar_field_grid(const struct MsnarThetaField *field,
                                  double *out,
                                  size_t capacity);

/**
 * Estimated regression values of zero-based `regime` along the grid.
 */
enum MsnarStatus msnar_field_theta(const struct MsnarThetaField *field,
                                   size_t regime,
                                   double *out,
                                   size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSNAR_H */
