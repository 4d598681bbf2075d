#ifndef DCC_FFI_H
#define DCC_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Scope rules accepted by [`dcc_policy_act`].
 */
#define DCC_MODE_DCC 0

#define DCC_MODE_RR_N2 1

/**
 * Result of every fallible call.
 */
typedef enum DccStatus {
  DCC_STATUS_OK = 0,
  DCC_STATUS_NULL_POINTER = 1,
  DCC_STATUS_INVALID_ARGUMENT = 2,
  DCC_STATUS_INVALID_INSTANCE = 3,
  DCC_STATUS_EPISODE_OVER = 4,
  DCC_STATUS_IO = 5,
  DCC_STATUS_CHECKPOINT = 6,
  DCC_STATUS_MODEL_MISMATCH = 7,
  DCC_STATUS_PARSE = 8,
  DCC_STATUS_INTERNAL = 99,
} DccStatus;

/**
 * A running episode.
 */
typedef struct DccEnv DccEnv;

/**
 * A trained network plus the recurrent state of the episode it is playing.
 */
typedef struct DccPolicy DccPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *dcc_last_error_message(void);

/**
 * Engine version as a static NUL-terminated string.
 */
const char *dcc_version(void);

/**
 * Number of bytes in one observation: channels × fov × fov.
 */
size_t dcc_observation_len(uint32_t fov);

/**
 * Creates an environment from instance text (`m n` header, `m` map rows of
 * `.` and `#`, then one `start_row start_col goal_row goal_col` line per
 * agent).
 *
 * # Safety
 * `instance_text` must be a NUL-terminated string and `out` a valid
 * pointer. Free the result with [`dcc_env_free`].
 */
enum DccStatus dcc_env_from_text(const char *instance_text,
                                 uint32_t step_limit,
                                 uint32_t fov,
                                 struct DccEnv **out);

/**
 * Creates a random environment: a `size`×`size` map with the given
 * obstacle density and `agents` start/goal pairs, all drawn from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer. Free the result with [`dcc_env_free`].
 */
enum DccStatus dcc_env_generate(uint32_t size,
                                uint32_t agents,
                                double density,
                                uint64_t seed,
                                uint32_t step_limit,
                                uint32_t fov,
                                struct DccEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from this library, not yet freed.
 */
void dcc_env_free(struct DccEnv *env);

/**
 * Agent count, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
uint32_t dcc_env_num_agents(const struct DccEnv *env);

/**
 * Field-of-view width, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
uint32_t dcc_env_fov(const struct DccEnv *env);

/**
 * Steps taken so far, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
uint32_t dcc_env_step_count(const struct DccEnv *env);

/**
 * True when every agent is on its goal.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
bool dcc_env_is_success(const struct DccEnv *env);

/**
 * True when the episode is over (success or step limit).
 *
 * # Safety
 * `env` must be null or a live handle.
 */
bool dcc_env_is_done(const struct DccEnv *env);

/**
 * Back to the start positions.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
enum DccStatus dcc_env_reset(struct DccEnv *env);

/**
 * Writes every agent's (row, col) into `rows`/`cols`, each of length `n`
 * equal to the agent count.
 *
 * # Safety
 * `rows` and `cols` must point to `n` writable `u32`s.
 */
enum DccStatus dcc_env_positions(const struct DccEnv *env,
                                 uint32_t *rows,
                                 uint32_t *cols,
                                 size_t n);

/**
 * Writes agent `agent`'s observation, channel-major `[channel][row][col]`
 * with one byte per cell (0 or 1), into `out` of length `len`
 * (see [`dcc_observation_len`]).
 *
 * # Safety
 * `out` must point to `len` writable bytes.
 */
enum DccStatus dcc_env_observation(const struct DccEnv *env,
                                   uint32_t agent,
                                   uint8_t *out,
                                   size_t len);

/**
 * Applies one joint action (0 up, 1 down, 2 left, 3 right, 4 stay per
 * agent). `rewards` (length `n`) and `done` may be null.
 *
 * # Safety
 * `actions` must point to `n` readable bytes; `rewards`, when non-null,
 * to `n` writable floats; `done`, when non-null, to one writable bool.
 */
enum DccStatus dcc_env_step(struct DccEnv *env,
                            const uint8_t *actions,
                            size_t n,
                            float *rewards,
                            bool *done);

/**
 * Loads a checkpoint written by `dcc train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer. Free
 * the result with [`dcc_policy_free`].
 */
enum DccStatus dcc_policy_load(const char *path, struct DccPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from this library, not yet freed.
 */
void dcc_policy_free(struct DccPolicy *policy);

/**
 * Clears the recurrent state; call before each new episode.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
enum DccStatus dcc_policy_reset(struct DccPolicy *policy);

/**
 * Field of view the policy was trained with.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
uint32_t dcc_policy_fov(const struct DccPolicy *policy);

/**
 * Greedy joint action for the environment's current state under `mode`
 * (`DCC_MODE_DCC` or `DCC_MODE_RR_N2`), written to `actions` (length
 * `n`, the agent count). `comm_pairs`, when non-null,
 * receives the number of requests sent this step. Updates the policy's
 * recurrent state; the environment is not stepped.
 *
 * # Safety
 * `actions` must point to `n` writable bytes; `comm_pairs`, when
 * non-null, to one writable `u32`.
 */
enum DccStatus dcc_policy_act(struct DccPolicy *policy,
                              const struct DccEnv *env,
                              uint32_t mode,
                              uint8_t *actions,
                              size_t n,
                              uint32_t *comm_pairs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCC_FFI_H */
