#ifndef DACOMP_H
#define DACOMP_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DacompStatus {
  DACOMP_STATUS_OK = 0,
  DACOMP_STATUS_NULL_POINTER = 1,
  DACOMP_STATUS_INVALID_UTF8 = 2,
  DACOMP_STATUS_DIMENSION = 3,
  DACOMP_STATUS_CONTRACT = 4,
  DACOMP_STATUS_CONFIG = 5,
  DACOMP_STATUS_TRANSFER = 6,
  DACOMP_STATUS_FORMAT = 7,
  DACOMP_STATUS_NUMERIC = 8,
  DACOMP_STATUS_IO = 9,
  DACOMP_STATUS_BUFFER_TOO_SMALL = 10,
  DACOMP_STATUS_PANIC = 11,
} DacompStatus;

/**
 * Opaque model handle.
 */
typedef struct DacompModel DacompModel;

/**
 * Opaque pruning mask handle.
 */
typedef struct DacompPruneState DacompPruneState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (nul-terminated)
 * and stores the full length including the nul in `needed`.
 *
 * # Safety
 * `buf` must hold `len` writable bytes or be null with `len == 0`; `needed` may be null.
 */
enum DacompStatus dacomp_last_error(char *buf, size_t len, size_t *needed);

/**
 * Builds a freshly initialised model from a TOML model description.
 *
 * # Safety
 * `spec_toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum DacompStatus dacomp_model_new(const char *spec_toml, uint64_t seed, struct DacompModel **out);

/**
 * Builds a model from a TOML description and loads its weights from a checkpoint.
 *
 * # Safety
 * String arguments must be nul-terminated and `out` a valid pointer.
 */
enum DacompStatus dacomp_model_load(const char *spec_toml,
                                    const char *path,
                                    struct DacompModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void dacomp_model_free(struct DacompModel *model);

/**
 * # Safety
 * `model` must be a live handle and `path` a nul-terminated string.
 */
enum DacompStatus dacomp_model_save(const struct DacompModel *model, const char *path);

/**
 * Number of scalar parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DacompStatus dacomp_model_param_count(const struct DacompModel *model, size_t *out);

/**
 * Input extents `[channels, height, width]` and class count.
 *
 * # Safety
 * `model` must be a live handle; `input_shape` must hold 3 values and `classes` be valid.
 */
enum DacompStatus dacomp_model_shape(const struct DacompModel *model,
                                     size_t *input_shape,
                                     size_t *classes);

/**
 * Logits for `batch` inputs laid out as `[batch, C, H, W]`.
 *
 * # Safety
 * `input` must hold `batch * C * H * W` values and `logits` `logits_len` slots.
 */
enum DacompStatus dacomp_model_forward(const struct DacompModel *model,
                                       const double *input,
                                       size_t batch,
                                       double *logits,
                                       size_t logits_len);

/**
 * SHA-256 of all parameters as 64 hex characters plus a nul.
 *
 * # Safety
 * `buf` must hold `len` writable bytes.
 */
enum DacompStatus dacomp_model_checksum(const struct DacompModel *model, char *buf, size_t len);

/**
 * Magnitude pruning of the model's weights to `ratio`, keeping entries
 * already removed by `prior` (which may be null) removed.
 *
 * # Safety
 * `model` must be a live handle, `prior` null or live, `out` valid.
 */
enum DacompStatus dacomp_l1_prune(struct DacompModel *model,
                                  double ratio,
                                  const struct DacompPruneState *prior,
                                  struct DacompPruneState **out);

/**
 * Achieved fraction of zeroed prunable weights.
 *
 * # Safety
 * `state` must be a live handle and `out` valid.
 */
enum DacompStatus dacomp_prune_state_ratio(const struct DacompPruneState *state, double *out);

/**
 * # Safety
 * `state` must come from this library and not be used afterwards. Null is ignored.
 */
void dacomp_prune_state_free(struct DacompPruneState *state);

/**
 * Applies two random operations at `magnitude` to an interleaved `h x w x c`
 * 8-bit image. The draw is fixed by `(seed, epoch, index)`.
 *
 * # Safety
 * `pixels` and `out` must each hold `h * w * c` bytes.
 */
enum DacompStatus dacomp_randaugment(const uint8_t *pixels,
                                     size_t height,
                                     size_t width,
                                     size_t channels,
                                     uint8_t magnitude,
                                     uint64_t seed,
                                     uint64_t epoch,
                                     uint64_t index,
                                     uint8_t *out);

/**
 * Library version as a static nul-terminated string.
 */
const char *dacomp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DACOMP_H */
