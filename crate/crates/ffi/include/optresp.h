#ifndef OPTRESP_H
#define OPTRESP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every exported function.
 */
typedef enum OptrespStatus {
  OPTRESP_STATUS_OK = 0,
  OPTRESP_STATUS_NULL_POINTER = 1,
  OPTRESP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Invalid configuration, unknown model or inconsistent sizes.
   */
  OPTRESP_STATUS_CONFIG = 3,
  /**
   * Orbit divergence, degenerate frames or a failed shadowing solve.
   */
  OPTRESP_STATUS_NUMERIC = 4,
  OPTRESP_STATUS_BUFFER_TOO_SMALL = 5,
  OPTRESP_STATUS_PANIC = 6,
} OptrespStatus;

/**
 * Opaque engine handle.
 */
typedef struct OptrespEngine OptrespEngine;

/**
 * Engine construction settings; obtain defaults from [`optresp_engine_params_default`].
 */
typedef struct OptrespEngineParams {
  size_t seg_len;
  size_t n_segments;
  size_t window;
  size_t warmup;
  size_t frame_warmup;
  uint64_t seed;
  /**
   * `+1` or `-1`.
   */
  double unstable_sign;
} OptrespEngineParams;

/**
 * Response of one perturbation with its standard error.
 */
typedef struct OptrespResponse {
  double r1;
  double r2w;
  double r3w;
  double total;
  /**
   * Batch-means standard error of `total`.
   */
  double std_error;
} OptrespResponse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of the calling thread into `buf` as a
 * NUL-terminated string, truncating to `len − 1` bytes.
 *
 * Returns the full message length excluding the terminator, or 0 when the
 * last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t optresp_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *optresp_version(void);

/**
 * Default engine settings.
 */
struct OptrespEngineParams optresp_engine_params_default(void);

/**
 * Builds an engine for a named model (`solenoid2d`, `solenoid3d`, `solenoid21d`).
 *
 * # Safety
 * `model` must be a NUL-terminated string and `out` a valid pointer. On
 * success `*out` owns a handle that must be released with [`optresp_engine_free`].
 */
enum OptrespStatus optresp_engine_new(const char *model,
                                      struct OptrespEngineParams params,
                                      struct OptrespEngine **out);

/**
 * Releases an engine; null is accepted.
 *
 * # Safety
 * `engine` must be null or a handle from [`optresp_engine_new`] not yet freed.
 */
void optresp_engine_free(struct OptrespEngine *engine);

/**
 * State dimension of the engine's model.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum OptrespStatus optresp_engine_dim(const struct OptrespEngine *engine, size_t *out);

/**
 * Orbit average of the observable over the retained steps.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum OptrespStatus optresp_engine_mu_phi(const struct OptrespEngine *engine, double *out);

/**
 * Response of the normalized Fourier element with slot `j` (1-based) and
 * multi-index `n[0..n_len]`, in `H^p` with weights `C_l = (2π)^{−2l}`.
 *
 * # Safety
 * `engine` must be a live handle, `n` must point to `n_len` values and `out`
 * must be a valid pointer.
 */
enum OptrespStatus optresp_basis_response(const struct OptrespEngine *engine,
                                          size_t j,
                                          const size_t *n,
                                          size_t n_len,
                                          size_t p,
                                          struct OptrespResponse *out);

/**
 * Response of the normalized restricted element `B̃_n`, whose first two
 * components equal `b_n(x¹)`, in `H^p(ℝ)` with weights `C_l = (2π)^{−2l}`.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum OptrespStatus optresp_restricted_response(const struct OptrespEngine *engine,
                                               size_t n,
                                               size_t p,
                                               struct OptrespResponse *out);

/**
 * `‖B_n‖²_{H^p}` with weights `C_l = (2π)^{−2l}`.
 *
 * # Safety
 * `n` must point to `n_len` values and `out` must be a valid pointer.
 */
enum OptrespStatus optresp_hp_norm_sq(const size_t *n, size_t n_len, size_t p, double *out);

/**
 * Splits `m` into the leading quotient followed by `n_bits` base-`base`
 * digits; `out` receives `n_bits + 1` values.
 *
 * # Safety
 * `out` must point to `out_len` writable values.
 */
enum OptrespStatus optresp_int2vec(size_t m,
                                   size_t base,
                                   size_t n_bits,
                                   size_t *out,
                                   size_t out_len);

/**
 * Inverse of [`optresp_int2vec`].
 *
 * # Safety
 * `digits` must point to `len` values and `out` must be a valid pointer.
 */
enum OptrespStatus optresp_vec2int(const size_t *digits, size_t len, size_t base, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTRESP_H */
