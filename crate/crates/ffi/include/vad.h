#ifndef VAD_H
#define VAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call status. Codes 2-4 match the command-line exit codes.
 */
typedef enum VadStatus {
  VAD_STATUS_OK = 0,
  VAD_STATUS_CONFIG_ERROR = 2,
  VAD_STATUS_DATA_ERROR = 3,
  VAD_STATUS_NUMERIC_ERROR = 4,
  VAD_STATUS_NULL_POINTER = 10,
  VAD_STATUS_INVALID_ARGUMENT = 11,
  VAD_STATUS_PANIC = 12,
} VadStatus;

typedef enum VadModelKind {
  VAD_MODEL_KIND_VAD = 0,
  VAD_MODEL_KIND_VAE = 1,
} VadModelKind;

/**
 * Opaque model handle.
 */
typedef struct VadModel VadModel;

/**
 * Per-entry MSE by category; NaN marks a category without entries.
 */
typedef struct VadCategoryMse {
  double incomplete;
  double missing;
  double full;
} VadCategoryMse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *vad_last_error_message(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VadStatus vad_model_load(const char *path, struct VadModel **out);

/**
 * Reads a checkpoint from memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be valid.
 */
enum VadStatus vad_model_from_bytes(const uint8_t *bytes, size_t len, struct VadModel **out);

/**
 * Freshly initialized model from a TOML config (NULL for defaults).
 *
 * # Safety
 * `config_toml` must be NULL or NUL-terminated; `out` must be valid.
 */
enum VadStatus vad_model_init(const char *config_toml,
                              enum VadModelKind kind,
                              size_t data_dim,
                              uint64_t seed,
                              struct VadModel **out);

/**
 * Trains a model on `rows × cols` incomplete data.
 *
 * # Safety
 * `x` and `mask` must hold `rows·cols` elements; `config_toml` must be NULL or
 * NUL-terminated; `out` must be valid. `final_lower_bound` may be NULL.
 */
enum VadStatus vad_model_train(const char *config_toml,
                               enum VadModelKind kind,
                               const double *x,
                               const uint8_t *mask,
                               size_t rows,
                               size_t cols,
                               uint64_t seed,
                               struct VadModel **out,
                               double *final_lower_bound);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void vad_model_free(struct VadModel *model);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` NUL-terminated.
 */
enum VadStatus vad_model_save(const struct VadModel *model, const char *path);

/**
 * Latent width, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t vad_model_latent_dim(const struct VadModel *model);

/**
 * Data width, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t vad_model_data_dim(const struct VadModel *model);

/**
 * # Safety
 * `model` must be NULL or a live handle.
 */
enum VadModelKind vad_model_kind(const struct VadModel *model);

/**
 * Decodes `rows` latent vectors into `out` (`rows × data_dim`).
 *
 * # Safety
 * `z` must hold `rows·latent_dim` values and `out` room for `rows·data_dim`.
 */
enum VadStatus vad_model_decode(const struct VadModel *model,
                                const double *z,
                                size_t rows,
                                double *out);

/**
 * Posterior means and log-sigmas (`rows × latent_dim` each) for new rows.
 * The model is not modified.
 *
 * # Safety
 * `x`/`mask` must hold `rows·data_dim` elements, the outputs room for
 * `rows·latent_dim`; `lower_bound` may be NULL.
 */
enum VadStatus vad_model_infer(const struct VadModel *model,
                               const double *x,
                               const uint8_t *mask,
                               size_t rows,
                               uint64_t seed,
                               double *mu_out,
                               double *log_sigma_out,
                               double *lower_bound);

/**
 * Infers posteriors, then writes the rows with missing entries filled from
 * the decoded means.
 *
 * # Safety
 * `x`, `mask` and `out` must each hold `rows·data_dim` elements.
 */
enum VadStatus vad_model_impute(const struct VadModel *model,
                                const double *x,
                                const uint8_t *mask,
                                size_t rows,
                                uint64_t seed,
                                double *out);

/**
 * Decoded posterior means for new rows, `rows × data_dim`.
 *
 * # Safety
 * As for `vad_model_impute`.
 */
enum VadStatus vad_model_reconstruct(const struct VadModel *model,
                                     const double *x,
                                     const uint8_t *mask,
                                     size_t rows,
                                     uint64_t seed,
                                     double *out);

/**
 * Per-category MSE of `decoded` against `truth` under `mask`.
 *
 * # Safety
 * The three arrays must hold `rows·cols` elements; `out` must be valid.
 */
enum VadStatus vad_eval_mse(const double *decoded,
                            const double *truth,
                            const uint8_t *mask,
                            size_t rows,
                            size_t cols,
                            struct VadCategoryMse *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VAD_H */
