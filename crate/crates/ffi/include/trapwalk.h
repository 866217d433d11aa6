/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef TRAPWALK_H
#define TRAPWALK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. `TW_STATUS_OK` is zero; every other value names an error
 kind.
 */
typedef enum TwStatus {
  TW_STATUS_OK = 0,
  TW_STATUS_NULL_POINTER = 1,
  TW_STATUS_DOMAIN = 2,
  TW_STATUS_CAPACITY = 3,
  TW_STATUS_NO_SURVIVING_PATH = 4,
  TW_STATUS_CONVERGENCE = 5,
  TW_STATUS_CONSISTENCY = 6,
  TW_STATUS_FORMAT = 7,
  TW_STATUS_IO = 8,
  TW_STATUS_INVALID_UTF8 = 9,
  TW_STATUS_PANIC = 10,
} TwStatus;

/*
 Opaque obstacle environment.
 */
typedef struct TwEnvironment TwEnvironment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *tw_version(void);

/*
 Copies the last error message of this thread into `buf` (truncated and
 NUL-terminated when `cap > 0`). Returns the full message length in bytes,
 excluding the terminator.

 # Safety
 `buf` must be null or point to `cap` writable bytes.
 */
size_t tw_last_error_message(char *buf, size_t cap);

/*
 Bernoulli environment on `[-half_width, half_width]^dim`; sites are open
 with probability `p`.

 # Safety
 `out` must point to a writable handle slot.
 */
enum TwStatus tw_env_generate(uint32_t dim,
                              int32_t half_width,
                              double p,
                              uint64_t seed,
                              struct TwEnvironment **out);

/*
 Hand-built environment on `[-half_width, half_width]^dim` from one byte
 per site (nonzero = open), ordered with axis 0 varying fastest.

 # Safety
 `open` must point to `len` readable bytes; `out` to a writable handle
 slot.
 */
enum TwStatus tw_env_from_mask(uint32_t dim,
                               int32_t half_width,
                               const uint8_t *open,
                               size_t len,
                               struct TwEnvironment **out);

/*
 Like [`tw_env_generate`], regenerating until the origin lies in the
 spanning cluster. `attempts` (nullable) receives the number of retries.

 # Safety
 `out` must point to a writable handle slot; `attempts` must be null or
 writable.
 */
enum TwStatus tw_env_generate_spanning(uint32_t dim,
                                       int32_t half_width,
                                       double p,
                                       uint64_t seed,
                                       uint32_t max_attempts,
                                       struct TwEnvironment **out,
                                       uint32_t *attempts);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a writable handle slot.
 */
enum TwStatus tw_env_load(const char *path, struct TwEnvironment **out);

/*
 # Safety
 `env` must be a live handle; `path` a NUL-terminated string.
 */
enum TwStatus tw_env_save(const struct TwEnvironment *env, const char *path);

/*
 Releases a handle. Null is ignored.

 # Safety
 `env` must be null or a handle not yet freed.
 */
void tw_env_free(struct TwEnvironment *env);

/*
 # Safety
 `env` must be a live handle; `out` writable.
 */
enum TwStatus tw_env_dim(const struct TwEnvironment *env, uint32_t *out);

/*
 # Safety
 `env` must be a live handle; `out` writable.
 */
enum TwStatus tw_env_open_count(const struct TwEnvironment *env, uint64_t *out);

/*
 Whether a site is open; sites outside the box are closed.

 # Safety
 `env` must be a live handle, `coords` must hold `len` values and `out`
 must be writable.
 */
enum TwStatus tw_env_is_open(const struct TwEnvironment *env,
                             const int32_t *coords,
                             size_t len,
                             bool *out);

/*
 Probability that the walk started at `start` survives `horizon` steps.

 # Safety
 `env` must be a live handle, `start` must hold `len` values and `out`
 must be writable.
 */
enum TwStatus tw_survival_probability(const struct TwEnvironment *env,
                                      const int32_t *start,
                                      size_t len,
                                      uint64_t horizon,
                                      double *out);

/*
 Principal eigenvalue of the walk restricted to the open component of
 `center` within Euclidean distance `radius`. Zero at a closed site.

 # Safety
 `env` must be a live handle, `center` must hold `len` values and `out`
 must be writable.
 */
enum TwStatus tw_principal_lambda(const struct TwEnvironment *env,
                                  const int32_t *center,
                                  size_t len,
                                  double radius,
                                  double tol,
                                  double *out);

/*
 Length of the shortest open path from `u` to `v`, or -1 when they are not
 connected.

 # Safety
 `env` must be a live handle, `u` and `v` must hold `len` values each and
 `out` must be writable.
 */
enum TwStatus tw_chemical_distance(const struct TwEnvironment *env,
                                   const int32_t *u,
                                   const int32_t *v,
                                   size_t len,
                                   int64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAPWALK_H */
