#ifndef MDN_MOTION_H
#define MDN_MOTION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum MdnStatus {
  MDN_STATUS_OK = 0,
  MDN_STATUS_NULL_POINTER = 1,
  MDN_STATUS_INVALID_ARGUMENT = 2,
  MDN_STATUS_DIMENSION_MISMATCH = 3,
  MDN_STATUS_IO = 4,
  MDN_STATUS_PARSE = 5,
  MDN_STATUS_NUMERIC = 6,
  MDN_STATUS_PANIC = 7,
} MdnStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct MdnModel MdnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mdn_version(void);

/**
 * Message for the most recent failure on this thread, or null. The
 * pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *mdn_last_error_message(void);

/**
 * Loads a checkpoint file. On success `*out` owns a handle that must be
 * released with [`mdn_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MdnStatus mdn_model_load(const char *path, struct MdnModel **out);

/**
 * Releases a handle from [`mdn_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle that is not used afterwards.
 */
void mdn_model_free(struct MdnModel *model);

/**
 * Writes the joint count, frame count and number of hypotheses.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MdnStatus mdn_model_dims(const struct MdnModel *model,
                              size_t *joints,
                              size_t *frames,
                              size_t *components);

/**
 * Predicts from a root-centered 2D pose of `2 * joints` values.
 * `hypotheses` receives `components * frames * joints * 3` values and
 * `alphas` receives `components` mixture weights.
 *
 * # Safety
 * Each pointer must reference the stated number of elements.
 */
enum MdnStatus mdn_model_predict(const struct MdnModel *model,
                                 const double *pose,
                                 size_t pose_len,
                                 double *hypotheses,
                                 size_t hypotheses_len,
                                 double *alphas,
                                 size_t alphas_len);

/**
 * Numerically stable `log Σ exp(q_i)`.
 *
 * # Safety
 * `q` must reference `len` values and `out` must be valid.
 */
enum MdnStatus mdn_log_sum_exp(const double *q, size_t len, double *out);

/**
 * Best-of-M MPJPE. `hypotheses` holds `count` motions and `target` one
 * motion, each `frames * joints * 3` values.
 *
 * # Safety
 * Pointers must reference the stated number of elements.
 */
enum MdnStatus mdn_mpjpe_best(const double *hypotheses,
                              size_t count,
                              const double *target,
                              size_t frames,
                              size_t joints,
                              double *error,
                              size_t *index);

/**
 * Average pairwise distance between `count` hypotheses.
 *
 * # Safety
 * Pointers must reference the stated number of elements.
 */
enum MdnStatus mdn_apd(const double *hypotheses,
                       size_t count,
                       size_t frames,
                       size_t joints,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDN_MOTION_H */
