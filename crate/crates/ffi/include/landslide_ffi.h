#ifndef LANDSLIDE_FFI_H
#define LANDSLIDE_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Positive values match the command-line exit codes.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LS_STATUS_NULL_ARGUMENT = 1,
  LS_STATUS_CONFIG = 2,
  LS_STATUS_DATA = 3,
  LS_STATUS_NUMERICAL = 4,
  /**
   * A caller-supplied buffer is too small.
   */
  LS_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * A panic was caught at the boundary.
   */
  LS_STATUS_INTERNAL = 6,
} LsStatus;

typedef struct LsCalibration LsCalibration;

typedef struct LsModel LsModel;

typedef struct LsRaster LsRaster;

/**
 * Per-pixel chronology. Undefined metrics are NaN or -1.
 */
typedef struct LsPixelMetrics {
  double frequency;
  int32_t first_occurrence;
  int32_t persistence;
  int32_t reoccurrence;
  uint32_t valid_years;
  bool left_censored;
} LsPixelMetrics;

typedef struct LsAccuracy {
  double oa;
  /**
   * NaN when no pixel was predicted landslide.
   */
  double ua;
  /**
   * NaN when the reference holds no landslide.
   */
  double pa;
} LsAccuracy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failed call on this thread into `buf`,
 * NUL-terminated. Returns the message length in bytes excluding the NUL, or
 * 0 when there is no message.
 */
size_t ls_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Creates a raster from `width * height` row-major values; NaN is nodata.
 */
enum LsStatus ls_raster_new(size_t width,
                            size_t height,
                            double origin_x,
                            double origin_y,
                            double pixel_size,
                            const float *values,
                            struct LsRaster **out);

/**
 * Loads a raster from its file stem (`<stem>.hdr.json` plus payload).
 */
enum LsStatus ls_raster_load(const char *path, struct LsRaster **out);

enum LsStatus ls_raster_save(const struct LsRaster *raster, const char *path);

enum LsStatus ls_raster_dims(const struct LsRaster *raster, size_t *width, size_t *height);

/**
 * Copies all values into `buf`, which must hold at least `width * height`.
 */
enum LsStatus ls_raster_copy_values(const struct LsRaster *raster, float *buf, size_t len);

void ls_raster_free(struct LsRaster *raster);

enum LsStatus ls_model_load(const char *path, struct LsModel **out);

enum LsStatus ls_model_n_features(const struct LsModel *model, size_t *out);

/**
 * Predicts one row of `n` features. `label` receives 1 for landslide and 0
 * otherwise; `fraction` the share of trees voting for that label.
 */
enum LsStatus ls_model_predict(const struct LsModel *model,
                               const double *row,
                               size_t n,
                               int32_t *label,
                               double *fraction);

void ls_model_free(struct LsModel *model);

/**
 * The built-in published coefficients.
 */
enum LsStatus ls_calibration_published(struct LsCalibration **out);

enum LsStatus ls_calibration_load(const char *path, struct LsCalibration **out);

enum LsStatus ls_calibration_apply_value(const struct LsCalibration *cal,
                                         double radiance,
                                         double *out);

/**
 * Harmonizes a radiance raster into a new raster handle.
 */
enum LsStatus ls_calibration_apply(const struct LsCalibration *cal,
                                   const struct LsRaster *radiance,
                                   struct LsRaster **out);

void ls_calibration_free(struct LsCalibration *cal);

/**
 * Metrics for one pixel. `series[i]` is 1 (landslide), 0 (not landslide)
 * or any other value for unobserved, labelled by `years[i]`.
 */
enum LsStatus ls_pixel_metrics(const int8_t *series,
                               const int32_t *years,
                               size_t n,
                               struct LsPixelMetrics *out);

/**
 * OA, UA and PA from confusion counts.
 */
enum LsStatus ls_accuracy(uint64_t tp,
                          uint64_t tn,
                          uint64_t fp,
                          uint64_t fn_,
                          struct LsAccuracy *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANDSLIDE_FFI_H */
