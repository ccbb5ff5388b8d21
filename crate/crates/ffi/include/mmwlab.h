#ifndef MMWLAB_H
#define MMWLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Model kind codes reported by [`mmw_model_kind`].
 */
#define MMW_KIND_FOREST 1

#define MMW_KIND_MLP 2

/**
 * Result code of every fallible call.
 */
typedef enum MmwStatus {
  MMW_STATUS_OK = 0,
  MMW_STATUS_NULL_POINTER = 1,
  MMW_STATUS_INVALID_ARGUMENT = 2,
  MMW_STATUS_IO = 3,
  MMW_STATUS_FORMAT = 4,
  MMW_STATUS_DIMENSION_MISMATCH = 5,
  MMW_STATUS_OUT_OF_RANGE = 6,
  MMW_STATUS_PANIC = 7,
} MmwStatus;

/**
 * A parsed dataset file.
 */
typedef struct MmwDataset MmwDataset;

/**
 * A trained forest or MLP.
 */
typedef struct MmwModel MmwModel;

/**
 * A model plus the buffer of the `s` most recent frames.
 */
typedef struct MmwPredictor MmwPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mmw_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mmw_version(void);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmwStatus mmw_model_load(const char *path, struct MmwModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`mmw_model_load`] and not be used afterwards.
 */
void mmw_model_free(struct MmwModel *model);

/**
 * Number of features the model expects (`s·h·w`).
 *
 * # Safety
 * Pointers must be valid.
 */
enum MmwStatus mmw_model_input_dim(const struct MmwModel *model, size_t *out);

/**
 * Writes [`MMW_KIND_FOREST`] or [`MMW_KIND_MLP`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum MmwStatus mmw_model_kind(const struct MmwModel *model, uint32_t *out);

/**
 * Predicts received power (dBm) from one flattened stack of `len` floats.
 *
 * # Safety
 * `x` must point to `len` readable floats; other pointers must be valid.
 */
enum MmwStatus mmw_model_predict(const struct MmwModel *model,
                                 const float *x,
                                 size_t len,
                                 double *out_dbm);

/**
 * Creates a live predictor holding `s` frames of `h x w`. The model is
 * shared, so it may be freed independently.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MmwStatus mmw_predictor_new(const struct MmwModel *model,
                                 size_t s,
                                 size_t h,
                                 size_t w,
                                 struct MmwPredictor **out);

/**
 * Pushes one reduced frame (`h·w` normalized depths, row-major). Once `s`
 * frames have arrived, writes 1 to `ready` and the forecast to `out_dbm`;
 * before that writes 0 and leaves `out_dbm` untouched.
 *
 * # Safety
 * `frame` must point to `len` readable floats; other pointers must be valid.
 */
enum MmwStatus mmw_predictor_push(struct MmwPredictor *pred,
                                  const float *frame,
                                  size_t len,
                                  int32_t *ready,
                                  double *out_dbm);

/**
 * Empties the frame buffer.
 *
 * # Safety
 * `pred` must be valid.
 */
enum MmwStatus mmw_predictor_reset(struct MmwPredictor *pred);

/**
 * Releases a predictor. Null is ignored.
 *
 * # Safety
 * `pred` must come from [`mmw_predictor_new`] and not be used afterwards.
 */
void mmw_predictor_free(struct MmwPredictor *pred);

/**
 * Loads a dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmwStatus mmw_dataset_load(const char *path, struct MmwDataset **out);

/**
 * Sample count and tensor shape.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MmwStatus mmw_dataset_shape(const struct MmwDataset *ds,
                                 size_t *n,
                                 size_t *s,
                                 size_t *h,
                                 size_t *w);

/**
 * Borrowed view of sample `i`: its label (dBm) and a pointer to its
 * `s·h·w` features, valid until the dataset is freed.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MmwStatus mmw_dataset_sample(const struct MmwDataset *ds,
                                  size_t i,
                                  float *label,
                                  const float **features,
                                  size_t *len);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must come from [`mmw_dataset_load`] and not be used afterwards.
 */
void mmw_dataset_free(struct MmwDataset *ds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMWLAB_H */
