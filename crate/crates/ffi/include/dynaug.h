#ifndef DYNAUG_H
#define DYNAUG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DynaugStatus {
  DYNAUG_STATUS_OK = 0,
  DYNAUG_STATUS_NULL_POINTER = 1,
  DYNAUG_STATUS_INVALID_ARGUMENT = 2,
  DYNAUG_STATUS_IO = 3,
  DYNAUG_STATUS_CHECKPOINT = 4,
  DYNAUG_STATUS_SHAPE = 5,
  DYNAUG_STATUS_NO_GATE = 6,
  DYNAUG_STATUS_INTERNAL = 7,
} DynaugStatus;

typedef enum DynaugVariant {
  DYNAUG_VARIANT_PROPOSED = 0,
  DYNAUG_VARIANT_NO_AUG = 1,
  DYNAUG_VARIANT_CONCAT = 2,
} DynaugVariant;

/**
 * Augmentation methods in bundle order.
 */
typedef enum DynaugMethod {
  DYNAUG_METHOD_IDENTITY = 0,
  DYNAUG_METHOD_JITTER = 1,
  DYNAUG_METHOD_MAGNITUDE_WARP = 2,
  DYNAUG_METHOD_TIME_WARP = 3,
  DYNAUG_METHOD_WINDOW_WARP = 4,
} DynaugMethod;

/**
 * Opaque model handle.
 */
typedef struct DynaugModel DynaugModel;

/**
 * Shape information of a loaded model.
 */
typedef struct DynaugModelInfo {
  enum DynaugVariant variant;
  size_t channels;
  size_t length;
  size_t n_classes;
  /**
   * Number of expert views the model consumes.
   */
  size_t n_experts;
  bool has_gate;
  bool has_normalizer;
} DynaugModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dynaug_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *dynaug_version(void);

/**
 * Loads a checkpoint written by the `dynaug` CLI or library.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum DynaugStatus dynaug_model_load(const char *path, struct DynaugModel **out);

/**
 * Releases a handle from [`dynaug_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dynaug_model_load`] and not be used afterwards.
 */
void dynaug_model_free(struct DynaugModel *model);

/**
 * # Safety
 * `model` and `info` must be valid pointers.
 */
enum DynaugStatus dynaug_model_info(const struct DynaugModel *model, struct DynaugModelInfo *info);

/**
 * Maps raw values in place with the normalizer stored in the checkpoint.
 * Missing values (NaN) become 0.
 *
 * # Safety
 * `values` must point to `len` writable doubles.
 */
enum DynaugStatus dynaug_model_normalize(const struct DynaugModel *model,
                                         double *values,
                                         size_t len);

/**
 * Eval-mode forward of one normalized series. Writes `n_classes` logits and,
 * when `alphas` is non-null and the model has a gate, `n_experts` gating
 * weights.
 *
 * # Safety
 * `values` must hold `channels * length` doubles; output buffers must hold
 * at least the stated lengths.
 */
enum DynaugStatus dynaug_model_predict(const struct DynaugModel *model,
                                       const double *values,
                                       size_t channels,
                                       size_t length,
                                       double *logits,
                                       size_t logits_len,
                                       double *alphas,
                                       size_t alphas_len);

/**
 * Applies one augmentation with default settings, seeded by `seed`.
 * `method` is a [`DynaugMethod`] value.
 *
 * # Safety
 * `values` and `out` must each hold `channels * length` doubles.
 */
enum DynaugStatus dynaug_augment(uint32_t method,
                                 const double *values,
                                 size_t channels,
                                 size_t length,
                                 uint64_t seed,
                                 double *out);

/**
 * `0.5 * sum_n ||f_n - mean(f)||^2` over `n` row-major feature vectors of
 * width `dim`.
 *
 * # Safety
 * `features` must hold `n * dim` doubles and `out` must be valid.
 */
enum DynaugStatus dynaug_consistency_loss(const double *features,
                                          size_t n,
                                          size_t dim,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNAUG_H */
