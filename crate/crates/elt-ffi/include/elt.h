/* C interface to the elt looped-transformer library. */

#ifndef ELT_H
#define ELT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every call.
 */
typedef enum EltStatus {
  ELT_STATUS_OK = 0,
  ELT_STATUS_CONFIG_ERROR = 2,
  ELT_STATUS_NUMERIC_ERROR = 3,
  ELT_STATUS_IO_ERROR = 4,
  ELT_STATUS_NULL_POINTER = 5,
  ELT_STATUS_BUFFER_TOO_SMALL = 6,
  ELT_STATUS_PANIC = 7,
} EltStatus;

/**
 * Opaque model handle.
 */
typedef struct EltModel EltModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
uintptr_t elt_last_error(char *buf, uintptr_t len);

/**
 * Load a checkpoint into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
 * writable pointer slot.
 */
enum EltStatus elt_model_load(const char *path, struct EltModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from `elt_model_load` and not be freed twice.
 */
void elt_model_free(struct EltModel *model);

/**
 * 0 = masked, 1 = diffusion, -1 on null.
 *
 * # Safety
 * `model` must be a live handle.
 */
int elt_model_mode(const struct EltModel *model);

/**
 * Architecture numbers a binding needs for buffer sizing.
 *
 * # Safety
 * `model` must be a live handle; out pointers may be null to skip fields.
 */
enum EltStatus elt_model_dims(const struct EltModel *model,
                              uintptr_t *n_layers,
                              uintptr_t *d_model,
                              uintptr_t *seq_len,
                              uintptr_t *l_max,
                              uintptr_t *vocab_size,
                              uintptr_t *latent_dim);

/**
 * Exact parameter counts (block-only and total).
 *
 * # Safety
 * `model` must be a live handle; out pointers may be null to skip fields.
 */
enum EltStatus elt_model_param_count(const struct EltModel *model,
                                     uint64_t *block,
                                     uint64_t *total);

/**
 * Analytic FLOPs of one model invocation at the given loop budget.
 *
 * # Safety
 * `model` must be a live handle; out pointers may be null to skip fields.
 */
enum EltStatus elt_model_flops(const struct EltModel *model,
                               uintptr_t loops,
                               uint64_t *block,
                               uint64_t *total);

/**
 * Masked generation. `class_id < 0` samples unconditionally. Writes exactly
 * seq_len token ids (mask sentinel never appears in a finished grid).
 *
 * # Safety
 * `model` must be a live handle; `out_tokens` must hold `out_len` u32s.
 */
enum EltStatus elt_sample_masked(const struct EltModel *model,
                                 int64_t class_id,
                                 uintptr_t steps,
                                 uintptr_t loops,
                                 double cfg_scale,
                                 uint64_t seed,
                                 uint32_t *out_tokens,
                                 uintptr_t out_len,
                                 uint64_t *block_applications);

/**
 * DDPM sampling. `class_id < 0` samples unconditionally. Writes exactly
 * seq_len * latent_dim values, row-major.
 *
 * # Safety
 * `model` must be a live handle; `out_values` must hold `out_len` doubles.
 */
enum EltStatus elt_sample_diffusion(const struct EltModel *model,
                                    int64_t class_id,
                                    uintptr_t steps,
                                    uintptr_t loops,
                                    double cfg_scale,
                                    uint64_t seed,
                                    double *out_values,
                                    uintptr_t out_len,
                                    uint64_t *block_applications);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELT_H */
