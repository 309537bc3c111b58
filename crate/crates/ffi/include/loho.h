#ifndef LOHO_H
#define LOHO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LohoStatus {
  LOHO_STATUS_OK = 0,
  LOHO_STATUS_NULL_POINTER = 1,
  LOHO_STATUS_INVALID_ARGUMENT = 2,
  LOHO_STATUS_PARSE = 3,
  LOHO_STATUS_RUN = 4,
  LOHO_STATUS_PANIC = 5,
} LohoStatus;

typedef enum LohoOutcome {
  LOHO_OUTCOME_SUCCESS = 0,
  LOHO_OUTCOME_BUDGET_EXHAUSTED = 1,
  LOHO_OUTCOME_TRACE_EXHAUSTED = 2,
} LohoOutcome;

/**
 * A finished episode and its full log. Opaque to C.
 */
typedef struct LohoEpisode LohoEpisode;

/**
 * A validated scene. Opaque to C.
 */
typedef struct LohoScene LohoScene;

/**
 * Episode settings. Fill with `loho_episode_params_default`, then adjust.
 */
typedef struct LohoEpisodeParams {
  uint64_t seed;
  uint64_t manager_interval;
  uint64_t step_budget;
  double p_slip;
  double drop_radius;
  /**
   * Waypoints per manager trace.
   */
  uint32_t waypoints;
  /**
   * Nonzero runs the plan-once baseline instead of the closed loop.
   */
  uint8_t open_loop;
} LohoEpisodeParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer stays
 * valid until the next fallible call on the same thread.
 */
const char *loho_last_error(void);

/**
 * Parses and validates a scene from NUL-terminated UTF-8 JSON.
 *
 * # Safety
 * `json` must be NULL or a valid C string; `out_scene` must be NULL or writable.
 */
enum LohoStatus loho_scene_from_json(const char *json, struct LohoScene **out_scene);

/**
 * # Safety
 * `scene` must be NULL or a handle from `loho_scene_from_json` not yet freed.
 */
void loho_scene_free(struct LohoScene *scene);

/**
 * Closed-loop defaults for `scene`, taking seed and failure settings from it.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_episode_params_default(const struct LohoScene *scene,
                                            struct LohoEpisodeParams *out_params);

/**
 * Runs one episode with the scripted manager and pure-pursuit executor.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_run_episode(const struct LohoScene *scene,
                                 const struct LohoEpisodeParams *params,
                                 struct LohoEpisode **out_episode);

/**
 * # Safety
 * `episode` must be NULL or a handle from `loho_run_episode` not yet freed.
 */
void loho_episode_free(struct LohoEpisode *episode);

/**
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_episode_outcome(const struct LohoEpisode *episode,
                                     enum LohoOutcome *out_outcome);

/**
 * Simulator steps taken.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_episode_frames(const struct LohoEpisode *episode, uint64_t *out_frames);

/**
 * Manager invocations made.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_episode_invocations(const struct LohoEpisode *episode, uint64_t *out_count);

/**
 * Fraction of plan primitives the final frame shows as done.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_episode_progress(const struct LohoEpisode *episode, double *out_score);

/**
 * The episode log as JSON lines. Release with `loho_string_free`.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
enum LohoStatus loho_episode_to_jsonl(const struct LohoEpisode *episode, char **out_text);

/**
 * # Safety
 * `text` must be NULL or a string returned by this library, not yet freed.
 */
void loho_string_free(char *text);

/**
 * Discrete Fréchet distance between two unit-square trajectories.
 *
 * # Safety
 * `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles.
 */
enum LohoStatus loho_dfd(const double *a,
                         size_t a_len,
                         const double *b,
                         size_t b_len,
                         double *out_value);

/**
 * Symmetric Hausdorff distance between the point sets of two trajectories.
 *
 * # Safety
 * `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles.
 */
enum LohoStatus loho_hausdorff(const double *a,
                               size_t a_len,
                               const double *b,
                               size_t b_len,
                               double *out_value);

/**
 * RMSE after resampling both trajectories to `samples` points by arc length.
 *
 * # Safety
 * `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles.
 */
enum LohoStatus loho_rmse(const double *a,
                          size_t a_len,
                          const double *b,
                          size_t b_len,
                          size_t samples,
                          double *out_value);

/**
 * Draws a trace of `len` interleaved pixel waypoints in `[0, 1000]` onto a
 * black `width` x `height` canvas and returns it as a binary PPM.
 * Release with `loho_bytes_free`.
 *
 * # Safety
 * `xy` must point to `2 * len` ints; out pointers must be NULL or writable.
 */
enum LohoStatus loho_render_trace_ppm(const int32_t *xy,
                                      size_t len,
                                      uint32_t width,
                                      uint32_t height,
                                      uint8_t gradient,
                                      uint8_t **out_bytes,
                                      size_t *out_len);

/**
 * # Safety
 * `bytes` and `len` must come from one successful `loho_render_trace_ppm`.
 */
void loho_bytes_free(uint8_t *bytes, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOHO_H */
