/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef I2PREG_H
#define I2PREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum I2pStatus {
  I2P_STATUS_OK = 0,
  I2P_STATUS_NULL_POINTER = 1,
  I2P_STATUS_INVALID_ARGUMENT = 2,
  I2P_STATUS_DEGENERATE = 3,
  I2P_STATUS_IO = 4,
  I2P_STATUS_PARSE = 5,
  I2P_STATUS_CONFIG = 6,
  I2P_STATUS_OUT_OF_RANGE = 7,
  I2P_STATUS_INTERNAL = 8,
} I2pStatus;

/**
 * Pinhole camera.
 */
typedef struct I2pCamera I2pCamera;

/**
 * Pipeline configuration.
 */
typedef struct I2pConfig I2pConfig;

/**
 * Outcome of a pipeline run.
 */
typedef struct I2pRun I2pRun;

/**
 * Robust-fit options; see [`i2p_ransac_default_options`].
 */
typedef struct I2pRansacOptions {
  uint32_t max_iterations;
  /**
   * Inlier threshold in pixels.
   */
  double reprojection_threshold;
  uint32_t min_inliers;
  uint64_t seed;
  /**
   * Early-termination confidence; 1.0 runs every iteration.
   */
  double confidence;
  /**
   * Nonzero to refine the focal length on the inliers.
   */
  uint8_t refine_focal;
} I2pRansacOptions;

/**
 * One registered image.
 */
typedef struct I2pResult {
  uint64_t image_id;
  double rotation[9];
  double translation[3];
  /**
   * Degrees; NaN when undefined.
   */
  double rre;
  /**
   * Meters; NaN when undefined.
   */
  double rte;
  uint64_t inliers;
  uint8_t solved;
  uint8_t success;
} I2pResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t i2p_last_error(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum I2pStatus i2p_camera_new(double fx,
                              double fy,
                              double cx,
                              double cy,
                              uint32_t width,
                              uint32_t height,
                              struct I2pCamera **out);

/**
 * # Safety
 * `cam` must be null or a handle from [`i2p_camera_new`] not yet freed.
 */
void i2p_camera_free(struct I2pCamera *cam);

/**
 * World-to-camera pose from `n >= 4` exact correspondences.
 * `points` holds `3n` world coordinates, `pixels` `2n` pixel coordinates.
 * Writes a row-major rotation (9) and a translation (3).
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `cam` must be live.
 */
enum I2pStatus i2p_epnp(const struct I2pCamera *cam,
                        const double *points,
                        const double *pixels,
                        size_t n,
                        double *rotation,
                        double *translation);

struct I2pRansacOptions i2p_ransac_default_options(void);

/**
 * EPnP inside RANSAC. `inlier_mask`, if non-null, receives `n` bytes
 * (1 = inlier). `solved` is set to 0 when no hypothesis reaches
 * `min_inliers`; the pose is then the identity.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `cam` must be live.
 */
enum I2pStatus i2p_ransac(const struct I2pCamera *cam,
                          const double *points,
                          const double *pixels,
                          size_t n,
                          const struct I2pRansacOptions *options,
                          double *rotation,
                          double *translation,
                          uint8_t *inlier_mask,
                          uint8_t *solved);

/**
 * Rotation error (degrees) and translation error (meters) of `pred` against `gt`.
 *
 * # Safety
 * Rotation pointers reference 9 values, translation pointers 3.
 */
enum I2pStatus i2p_registration_errors(const double *pred_rotation,
                                       const double *pred_translation,
                                       const double *gt_rotation,
                                       const double *gt_translation,
                                       double *rre,
                                       double *rte);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum I2pStatus i2p_config_default(struct I2pConfig **out);

/**
 * Parses TOML text; absent keys keep their defaults.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum I2pStatus i2p_config_parse(const char *text, struct I2pConfig **out);

/**
 * # Safety
 * `cfg` must be null or a live config handle.
 */
void i2p_config_free(struct I2pConfig *cfg);

/**
 * Generates the configured scenes and registers every image.
 *
 * # Safety
 * `cfg` must be live; `out` a valid handle slot.
 */
enum I2pStatus i2p_pipeline_run(const struct I2pConfig *cfg, struct I2pRun **out);

/**
 * Number of images in a run; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or live.
 */
size_t i2p_run_len(const struct I2pRun *run);

/**
 * Registration recall of a run; NaN for a null handle.
 *
 * # Safety
 * `run` must be null or live.
 */
double i2p_run_recall(const struct I2pRun *run);

/**
 * # Safety
 * `run` must be live; `out` must be valid.
 */
enum I2pStatus i2p_run_result(const struct I2pRun *run, size_t index, struct I2pResult *out);

/**
 * # Safety
 * `run` must be null or a live run handle.
 */
void i2p_run_free(struct I2pRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* I2PREG_H */
