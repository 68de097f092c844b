#ifndef RUGNN_H
#define RUGNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum RugnnStatus {
  RUGNN_STATUS_OK = 0,
  RUGNN_STATUS_NULL_POINTER = 1,
  RUGNN_STATUS_CONFIG_ERROR = 2,
  RUGNN_STATUS_DATA_ERROR = 3,
  RUGNN_STATUS_NUMERICAL_ERROR = 4,
  RUGNN_STATUS_BUFFER_TOO_SMALL = 5,
  RUGNN_STATUS_INVALID_STRING = 6,
  RUGNN_STATUS_PANIC = 7,
} RugnnStatus;

/*
 A trained surrogate loaded from a checkpoint file.
 */
typedef struct RugnnModel RugnnModel;

/*
 A forming sample loaded from a dataset sample directory.
 */
typedef struct RugnnSample RugnnSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *rugnn_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *rugnn_version(void);

/*
 Loads a checkpoint into a new model handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RugnnStatus rugnn_model_load(const char *path, struct RugnnModel **out);

/*
 Releases a model handle. Null is ignored.

 # Safety
 `model` must come from [`rugnn_model_load`] and not be freed twice.
 */
void rugnn_model_free(struct RugnnModel *model);

/*
 Number of mesh nodes the model was built for.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum RugnnStatus rugnn_model_n_nodes(const struct RugnnModel *model, size_t *out);

/*
 Loads one sample directory (manifest, meshes and positions).

 # Safety
 `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RugnnStatus rugnn_sample_load(const char *dir, struct RugnnSample **out);

/*
 Releases a sample handle. Null is ignored.

 # Safety
 `sample` must come from [`rugnn_sample_load`] and not be freed twice.
 */
void rugnn_sample_free(struct RugnnSample *sample);

/*
 Node count and number of time intervals `T` of a sample.

 # Safety
 `sample` must be a live handle; `n_nodes` and `intervals` valid pointers.
 */
enum RugnnStatus rugnn_sample_dims(const struct RugnnSample *sample,
                                   size_t *n_nodes,
                                   size_t *intervals);

/*
 Autoregressive rollout of `model` over `sample`.

 Writes `(T + 1) * N * 3` predicted coordinates into `positions` and the
 `T` per-timestep mean Euclidean errors into `mee`. Either buffer may be
 null to skip it; a non-null buffer that is too short fails with
 [`RugnnStatus::BufferTooSmall`] before any work is done.

 # Safety
 Handles must be live; non-null buffers must hold their stated lengths.
 */
enum RugnnStatus rugnn_rollout(const struct RugnnModel *model,
                               const struct RugnnSample *sample,
                               double *positions,
                               size_t positions_len,
                               double *mee,
                               size_t mee_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RUGNN_H */
