/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef NATWALK_H
#define NATWALK_H

#include <stddef.h>
#include <stdint.h>

/**
 * Byte length of an effort-schedule snapshot.
 */
#define NW_ADAPT_SNAPSHOT_LEN 41

/**
 * Result code of every fallible call.
 */
typedef enum NwStatus {
  NW_STATUS_OK = 0,
  NW_STATUS_NULL_POINTER = 1,
  NW_STATUS_INVALID_ARGUMENT = 2,
  NW_STATUS_PARSE = 3,
  NW_STATUS_INVALID_MODEL = 4,
  NW_STATUS_DIMENSION_MISMATCH = 5,
  NW_STATUS_DIVERGED = 6,
  NW_STATUS_NON_FINITE = 7,
  NW_STATUS_CORRUPT_SNAPSHOT = 8,
  NW_STATUS_BUFFER_TOO_SMALL = 9,
  NW_STATUS_IO = 10,
  NW_STATUS_INTERNAL = 11,
  NW_STATUS_PANIC = 12,
} NwStatus;

/**
 * Branch taken by one effort-schedule update.
 */
typedef enum NwBranch {
  NW_BRANCH_SLOW_DOWN = 0,
  NW_BRANCH_INCREASE = 1,
  NW_BRANCH_DECREASE = 2,
} NwBranch;

/**
 * Effort schedule with its configuration.
 */
typedef struct NwAdapt NwAdapt;

/**
 * Musculoskeletal model.
 */
typedef struct NwModel NwModel;

/**
 * Simulation state of one model.
 */
typedef struct NwState NwState;

/**
 * Height field.
 */
typedef struct NwTerrain NwTerrain;

/**
 * Effort-schedule hyperparameters.
 */
typedef struct NwAdaptConfig {
  double threshold;
  double smoothing;
  double delta0;
  double decay;
} NwAdaptConfig;

/**
 * Effort-schedule state as plain values.
 */
typedef struct NwAdaptValues {
  double r_mean;
  double alpha;
  double delta;
  double c_mean;
} NwAdaptValues;

/**
 * Per-step reward terms; the activity term is not yet scaled by alpha.
 */
typedef struct NwRewardTerms {
  double r_vel;
  double effort_activity;
  double effort_smooth;
  double effort_nactive;
  double pain_limits;
  double pain_grf;
} NwRewardTerms;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length in bytes, without
 * the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t nw_last_error(char *buf, size_t len);

/**
 * Built-in planar model.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NwStatus nw_model_default(struct NwModel **out);

/**
 * Model from a NUL-terminated TOML document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NwStatus nw_model_from_toml(const char *toml, struct NwModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, not yet freed.
 */
void nw_model_free(struct NwModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t nw_model_n_dofs(const struct NwModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t nw_model_n_muscles(const struct NwModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t nw_model_n_feet(const struct NwModel *model);

/**
 * Body weight in newtons.
 *
 * # Safety
 * `model` must be a live handle.
 */
double nw_model_body_weight(const struct NwModel *model);

/**
 * Total mechanical energy of a state.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum NwStatus nw_model_energy(const struct NwModel *model,
                              const struct NwState *state,
                              double *out);

/**
 * Flat ground.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NwStatus nw_terrain_flat(struct NwTerrain **out);

/**
 * Sloped-tile course.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NwStatus nw_terrain_sloped(uint64_t seed,
                                size_t n_tiles,
                                double tile_length,
                                double max_slope_deg,
                                struct NwTerrain **out);

/**
 * # Safety
 * `terrain` must be null or a handle from this library, not yet freed.
 */
void nw_terrain_free(struct NwTerrain *terrain);

/**
 * Ground height at `x`.
 *
 * # Safety
 * `terrain` must be a live handle and `out` valid.
 */
enum NwStatus nw_terrain_height(const struct NwTerrain *terrain, double x, double *out);

/**
 * Randomized initial standing state. A null `terrain` means flat ground.
 *
 * # Safety
 * `model` must be live, `terrain` null or live, `out` valid.
 */
enum NwStatus nw_state_reset(const struct NwModel *model,
                             const struct NwTerrain *terrain,
                             uint64_t seed,
                             struct NwState **out);

/**
 * State built from explicit arrays. Activations start at zero.
 *
 * # Safety
 * `q` and `qdot` must hold `n` values each; `out` must be valid.
 */
enum NwStatus nw_state_new(const struct NwModel *model,
                           const double *q,
                           const double *qdot,
                           size_t n,
                           struct NwState **out);

/**
 * # Safety
 * `state` must be null or a handle from this library, not yet freed.
 */
void nw_state_free(struct NwState *state);

/**
 * Simulated time in seconds.
 *
 * # Safety
 * `state` must be a live handle.
 */
double nw_state_time(const struct NwState *state);

/**
 * Copies generalized coordinates into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` values.
 */
enum NwStatus nw_state_q(const struct NwState *state, double *buf, size_t len);

/**
 * Copies generalized velocities into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` values.
 */
enum NwStatus nw_state_qdot(const struct NwState *state, double *buf, size_t len);

/**
 * Copies muscle activations into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` values.
 */
enum NwStatus nw_state_activations(const struct NwState *state, double *buf, size_t len);

/**
 * Holds excitations `u` for `substeps` integration steps of `dt`, updating
 * `state` in place. When `grf` is non-null the vertical ground reaction
 * force per foot after the last step is written to it. On failure the state
 * is left unchanged.
 *
 * # Safety
 * Handles must be live (`terrain` may be null for flat ground), `u` valid
 * for `n_u` values and `grf` null or valid for `n_grf` values.
 */
enum NwStatus nw_model_advance(const struct NwModel *model,
                               struct NwState *state,
                               const struct NwTerrain *terrain,
                               const double *u,
                               size_t n_u,
                               double dt,
                               size_t substeps,
                               double *grf,
                               size_t n_grf);

/**
 * Default effort-schedule hyperparameters.
 */
struct NwAdaptConfig nw_adapt_default_config(void);

/**
 * Fresh effort schedule. A null `config` selects the defaults.
 *
 * # Safety
 * `config` must be null or valid; `out` must be valid.
 */
enum NwStatus nw_adapt_new(const struct NwAdaptConfig *config, struct NwAdapt **out);

/**
 * # Safety
 * `adapt` must be null or a handle from this library, not yet freed.
 */
void nw_adapt_free(struct NwAdapt *adapt);

/**
 * Feeds one episode return. `branch` may be null.
 *
 * # Safety
 * `adapt` must be live; `branch` null or valid.
 */
enum NwStatus nw_adapt_update(struct NwAdapt *adapt, double episode_return, enum NwBranch *branch);

/**
 * Current schedule values.
 *
 * # Safety
 * `adapt` must be live and `out` valid.
 */
enum NwStatus nw_adapt_values(const struct NwAdapt *adapt, struct NwAdaptValues *out);

/**
 * Writes the [`NW_ADAPT_SNAPSHOT_LEN`]-byte snapshot of the schedule state.
 *
 * # Safety
 * `buf` must be valid for `len` bytes.
 */
enum NwStatus nw_adapt_snapshot(const struct NwAdapt *adapt, uint8_t *buf, size_t len);

/**
 * Schedule restored from a snapshot, with `config` (or the defaults when
 * null) for future updates.
 *
 * # Safety
 * `buf` must be valid for `len` bytes, `config` null or valid, `out` valid.
 */
enum NwStatus nw_adapt_restore(const uint8_t *buf,
                               size_t len,
                               const struct NwAdaptConfig *config,
                               struct NwAdapt **out);

/**
 * Scalar reward of a decomposed step for a given alpha.
 *
 * # Safety
 * `terms` must be valid.
 */
enum NwStatus nw_total_reward(const struct NwRewardTerms *terms, double alpha, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NATWALK_H */
