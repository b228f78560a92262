#ifndef TITAN_H
#define TITAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TitanStatus {
  TITAN_STATUS_OK = 0,
  TITAN_STATUS_NULL_POINTER = 1,
  TITAN_STATUS_INVALID_ARGUMENT = 2,
  TITAN_STATUS_IO = 3,
  TITAN_STATUS_PARSE = 4,
  TITAN_STATUS_SHAPE = 5,
  TITAN_STATUS_NUMERIC = 6,
  TITAN_STATUS_UNDEFINED = 7,
  TITAN_STATUS_PANIC = 8,
} TitanStatus;

// A loaded generator and its weights.
typedef struct TitanGenerator TitanGenerator;

// Vertical field of view and grid of a spherical projection.
typedef struct TitanProjection {
  size_t width;
  size_t height;
  double fov_up_deg;
  double fov_down_deg;
} TitanProjection;

// Input tensor shape `[channels, height, width]`, output image size and
// whether a depth map is produced.
typedef struct TitanGeneratorInfo {
  size_t num_classes;
  size_t in_channels;
  size_t in_height;
  size_t in_width;
  size_t out_height;
  size_t out_width;
  bool has_depth;
  size_t param_count;
} TitanGeneratorInfo;

typedef struct TitanDepthMetrics {
  double abs_rel;
  double sq_rel;
  double rms;
  double rms_log10;
  double delta1;
  double delta2;
  double delta3;
} TitanDepthMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *titan_last_error(void);

// Nul-terminated crate version.
const char *titan_version(void);

// Projects `n_points` interleaved `(x, y, z, intensity)` points.
//
// `out_channels` receives `5 * width * height` values, channel-major in the
// order x, y, z, intensity, range, with -1 in empty pixels. `out_mask`
// receives `width * height` flags, 1 where a point landed.
//
// # Safety
// Pointers must reference at least the stated number of elements.
enum TitanStatus titan_project_cloud(const float *points,
                                     size_t n_points,
                                     const struct TitanProjection *cfg,
                                     float *out_channels,
                                     size_t out_channels_len,
                                     uint8_t *out_mask,
                                     size_t out_mask_len);

// Loads a generator checkpoint into `*out`.
//
// # Safety
// `path` must be a nul-terminated UTF-8 string and `out` writable.
enum TitanStatus titan_generator_load(const char *path, struct TitanGenerator **out);

// Frees a handle from [`titan_generator_load`]; null is ignored.
//
// # Safety
// `g` must come from [`titan_generator_load`] and not be used afterwards.
void titan_generator_free(struct TitanGenerator *g);

// # Safety
// `g` must be a live handle and `out` writable.
enum TitanStatus titan_generator_info(const struct TitanGenerator *g,
                                      struct TitanGeneratorInfo *out);

// Runs one sample. `input` is the `[in_channels, in_height, in_width]`
// network input. `out_segments` receives `out_width * out_height` class
// ids. `out_depth` may be null; otherwise it receives the depth map in the
// `[0, 1]` training scale.
//
// # Safety
// Pointers must reference at least the stated number of elements.
enum TitanStatus titan_generator_infer(const struct TitanGenerator *g,
                                       const double *input_data,
                                       size_t input_len,
                                       uint8_t *out_segments,
                                       size_t out_segments_len,
                                       double *out_depth,
                                       size_t out_depth_len);

// Depth errors over `n` pixels. `mask` may be null to score pixels with
// positive ground truth; otherwise nonzero entries are scored.
//
// # Safety
// Pointers must reference at least `n` elements.
enum TitanStatus titan_depth_metrics(const double *pred,
                                     const double *gt,
                                     const uint8_t *mask,
                                     size_t n,
                                     struct TitanDepthMetrics *out);

// Mean IoU of `n` predicted labels against ground truth; ground-truth
// pixels labeled 255 are ignored. `per_class` may be null; otherwise it
// receives `classes` values with NaN for classes absent from both.
//
// # Safety
// Pointers must reference at least the stated number of elements.
enum TitanStatus titan_miou(const uint8_t *pred,
                            const uint8_t *gt,
                            size_t n,
                            size_t classes,
                            double *out_miou,
                            double *per_class,
                            size_t per_class_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TITAN_H */
