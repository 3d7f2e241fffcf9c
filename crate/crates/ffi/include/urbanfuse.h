#ifndef URBANFUSE_H
#define URBANFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum UfStatus {
  UF_STATUS_OK = 0,
  UF_STATUS_NULL_POINTER = 1,
  UF_STATUS_INVALID_ARGUMENT = 2,
  UF_STATUS_IO = 3,
  UF_STATUS_FORMAT = 4,
  UF_STATUS_VERSION = 5,
  UF_STATUS_CORRUPT = 6,
  UF_STATUS_SHAPE = 7,
  UF_STATUS_PANIC = 8,
} UfStatus;

/*
 A loaded model. Opaque to C callers.
 */
typedef struct UfModel UfModel;

/*
 Routing outcome for one row. `automatic` is 1 when the top class
 probability reached the threshold, in which case `class_index` names it.
 */
typedef struct UfRouting {
  int32_t automatic;
  size_t class_index;
  double probability;
} UfRouting;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *uf_version(void);

/*
 Message of the last failed call on this thread, or NULL. The pointer is
 valid until the next call into this library on the same thread.
 */
const char *uf_last_error_message(void);

/*
 Loads a classifier or fusion model container from `path`. On success
 `*out` receives a handle to release with [`uf_model_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum UfStatus uf_model_load(const char *path, struct UfModel **out);

/*
 Releases a model. NULL is ignored.

 # Safety
 `model` must be NULL or a handle from [`uf_model_load`] not yet freed.
 */
void uf_model_free(struct UfModel *model);

/*
 Number of classes, or 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t uf_model_num_classes(const struct UfModel *model);

/*
 Number of input values per row, or 0 for NULL. For fusion models a row
 is the raw blocks followed by each probability block's inputs.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t uf_model_num_features(const struct UfModel *model);

/*
 Label of class `index`, or NULL when out of range. The string lives as
 long as the model.

 # Safety
 `model` must be NULL or a live handle.
 */
const char *uf_model_class_label(const struct UfModel *model, size_t index);

/*
 Reads `n_rows` rows of `n_features` values (row-major) and writes
 `n_rows * num_classes` probabilities to `out`, whose capacity is
 `out_len` values.

 # Safety
 `rows` must point to `n_rows * n_features` readable doubles and `out` to
 `out_len` writable doubles.
 */
enum UfStatus uf_model_predict_proba(const struct UfModel *model,
                                     const double *rows,
                                     size_t n_rows,
                                     size_t n_features,
                                     double *out,
                                     size_t out_len);

/*
 Routes one row: automatic when the top probability reaches `threshold`.

 # Safety
 `row` must point to `n_features` readable doubles and `out` must be valid.
 */
enum UfStatus uf_model_route(const struct UfModel *model,
                             const double *row,
                             size_t n_features,
                             double threshold,
                             struct UfRouting *out);

/*
 Great-circle distance in meters, or NaN for out-of-range coordinates.
 */
double uf_haversine_m(double lat1, double lon1, double lat2, double lon2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URBANFUSE_H */
