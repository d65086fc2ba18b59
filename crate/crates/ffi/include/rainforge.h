#ifndef RAINFORGE_H
#define RAINFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every entry point.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  /**
   * Invalid argument, shape or config.
   */
  RF_STATUS_VALIDATION = 1,
  /**
   * File could not be read or written.
   */
  RF_STATUS_IO = 2,
  /**
   * A required pointer was null.
   */
  RF_STATUS_NULL_POINTER = 3,
  /**
   * Internal panic; the handle should be discarded.
   */
  RF_STATUS_PANIC = 4,
} RfStatus;

/**
 * Opaque generator handle.
 */
typedef struct RfGenerator RfGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a generator with default settings and the given master seed.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle into.
 */
enum RfStatus rf_generator_new(uint64_t seed, struct RfGenerator **out);

/**
 * Creates a generator from a TOML config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RfStatus rf_generator_from_config(const char *path, struct RfGenerator **out);

/**
 * Releases a generator; null is ignored.
 *
 * # Safety
 * `gen` must come from one of the constructors and not be used afterwards.
 */
void rf_generator_free(struct RfGenerator *gen);

/**
 * Renders a rainy image over a `height x width x 3` background in `[0, 1]`
 * with explicit factors (degrees for `theta_deg`). Noise and mixing
 * weights come from image `index` of the generator's seed. `rainy_out`
 * receives `height * width * 3` values; `rain_layer_out` and
 * `sparsity_out` may be null.
 *
 * # Safety
 * Buffers must be valid for the stated sizes.
 */
enum RfStatus rf_generator_render(const struct RfGenerator *gen,
                                  const double *background,
                                  size_t height,
                                  size_t width,
                                  double theta_deg,
                                  double s_l,
                                  double s_w,
                                  double tau,
                                  uint64_t index,
                                  double *rainy_out,
                                  double *rain_layer_out,
                                  double *sparsity_out);

/**
 * Rotatable TV of a `height x width x channels` layer at `theta_deg`.
 *
 * # Safety
 * `layer` must hold `height * width * channels` doubles; `out` must be valid.
 */
enum RfStatus rf_rot_tv_loss(const double *layer,
                             size_t height,
                             size_t width,
                             size_t channels,
                             double theta_deg,
                             double *out);

/**
 * Angle in degrees on `theta_min, theta_min + step, ..., theta_max` that
 * minimizes the rotatable TV; ties go to the smallest magnitude.
 *
 * # Safety
 * `layer` must hold `height * width * channels` doubles; `best_out` must be valid.
 */
enum RfStatus rf_orientation_scan(const double *layer,
                                  size_t height,
                                  size_t width,
                                  size_t channels,
                                  double theta_min,
                                  double theta_max,
                                  double step,
                                  double *best_out);

/**
 * Copies the calling thread's last error message into `buf` (always
 * NUL-terminated when `len > 0`) and returns the full message length in
 * bytes, excluding the terminator; 0 when there is no error.
 *
 * # Safety
 * `buf` must be writable for `len` bytes or null.
 */
size_t rf_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAINFORGE_H */
