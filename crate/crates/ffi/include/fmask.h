#ifndef FMASK_H
#define FMASK_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FmaskBands {
  FMASK_BANDS_RADIAL = 0,
  FMASK_BANDS_ANGULAR = 1,
} FmaskBands;

typedef enum FmaskStatus {
  FMASK_STATUS_OK = 0,
  FMASK_STATUS_NULL_POINTER = 1,
  FMASK_STATUS_INVALID_ARGUMENT = 2,
  FMASK_STATUS_SHAPE = 3,
  FMASK_STATUS_FORMAT = 4,
  FMASK_STATUS_IO = 5,
  /**
   * Training diverged or the mask objective became non-finite.
   */
  FMASK_STATUS_NUMERIC = 6,
  FMASK_STATUS_PANIC = 7,
} FmaskStatus;

/**
 * Opaque trained classifier.
 */
typedef struct FmaskCheckpoint FmaskCheckpoint;

/**
 * Opaque frequency mask.
 */
typedef struct FmaskMask FmaskMask;

/**
 * Mask optimizer settings; start from `fmask_learn_config_default`.
 */
typedef struct FmaskLearnConfig {
  double lambda;
  /**
   * Regularizer order, 1 or 2.
   */
  uint32_t norm;
  double lr;
  size_t max_iter;
  size_t batch_size;
  uint64_t seed;
  double tol;
  size_t patience;
} FmaskLearnConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fmask_version(void);

/**
 * Copies the calling thread's last error message into `buf`; returns its
 * length. Pass a null `buf` to query the length.
 */
size_t fmask_last_error(char *buf, size_t cap);

enum FmaskStatus fmask_checkpoint_load(const char *path, struct FmaskCheckpoint **out);

void fmask_checkpoint_free(struct FmaskCheckpoint *ck);

/**
 * Image side length `d`; images are `d*d` row-major values in [0, 1].
 */
size_t fmask_checkpoint_side(const struct FmaskCheckpoint *ck);

size_t fmask_checkpoint_classes(const struct FmaskCheckpoint *ck);

/**
 * Writes the content hash (hex) into `buf`; returns its length.
 */
size_t fmask_checkpoint_hash(const struct FmaskCheckpoint *ck, char *buf, size_t cap);

/**
 * Predicted class of each of `n` raw images, optionally filtered by `mask`
 * (may be null).
 */
enum FmaskStatus fmask_predict(const struct FmaskCheckpoint *ck,
                               const struct FmaskMask *mask,
                               const double *pixels,
                               size_t n,
                               uint32_t *out_labels);

struct FmaskLearnConfig fmask_learn_config_default(void);

/**
 * Learns one mask shared by `n` raw images.
 */
enum FmaskStatus fmask_learn_global(const struct FmaskCheckpoint *ck,
                                    const double *pixels,
                                    const uint32_t *labels,
                                    size_t n,
                                    const struct FmaskLearnConfig *config,
                                    struct FmaskMask **out);

/**
 * Learns the mask of one raw image. When the model misclassifies it,
 * `*out` is set to null and `*skipped` to 1.
 */
enum FmaskStatus fmask_learn_single(const struct FmaskCheckpoint *ck,
                                    const double *pixels,
                                    uint32_t label,
                                    const struct FmaskLearnConfig *config,
                                    struct FmaskMask **out,
                                    uint8_t *skipped);

/**
 * A `d×d` mask from natural-order values; conjugate partners must match.
 */
enum FmaskStatus fmask_mask_from_values(size_t d, const double *values, struct FmaskMask **out);

enum FmaskStatus fmask_mask_load(const char *path, struct FmaskMask **out);

enum FmaskStatus fmask_mask_complement(const struct FmaskMask *mask, struct FmaskMask **out);

void fmask_mask_free(struct FmaskMask *mask);

size_t fmask_mask_side(const struct FmaskMask *mask);

/**
 * Copies the `d*d` values into `out` (capacity `cap`).
 */
enum FmaskStatus fmask_mask_values(const struct FmaskMask *mask, double *out, size_t cap);

double fmask_mask_l1(const struct FmaskMask *mask);

double fmask_mask_zero_fraction(const struct FmaskMask *mask);

/**
 * Filters `n` images (any scaling) through the mask.
 */
enum FmaskStatus fmask_mask_apply(const struct FmaskMask *mask,
                                  const double *images,
                                  size_t n,
                                  double *out);

/**
 * Per-band energies of the mask over `k` radial or angular bands.
 */
enum FmaskStatus fmask_mask_band_energy(const struct FmaskMask *mask,
                                        enum FmaskBands kind,
                                        size_t k,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FMASK_H */
