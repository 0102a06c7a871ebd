#ifndef ORTHOSPLAT_H
#define ORTHOSPLAT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OsStatus {
  OS_STATUS_OK = 0,
  /**
   * `os_engine_step`: the stream has no more frames.
   */
  OS_STATUS_DONE = 1,
  OS_STATUS_NULL_ARGUMENT = 2,
  OS_STATUS_INVALID_ARGUMENT = 3,
  OS_STATUS_IO = 4,
  OS_STATUS_PARSE = 5,
  OS_STATUS_EMPTY_CLOUD = 6,
  OS_STATUS_INVALID_VIEW_BOX = 7,
  OS_STATUS_CHECKPOINT = 8,
  OS_STATUS_CONFIG = 9,
  OS_STATUS_BUFFER_TOO_SMALL = 10,
  OS_STATUS_PANIC = 11,
  OS_STATUS_OTHER = 12,
} OsStatus;

typedef enum OsUpAxis {
  OS_UP_AXIS_X = 0,
  OS_UP_AXIS_Y = 1,
  OS_UP_AXIS_Z = 2,
} OsUpAxis;

typedef struct OsEngine OsEngine;

typedef struct OsField OsField;

typedef struct OsRaster OsRaster;

typedef struct OsViewBox {
  double l;
  double r;
  double b;
  double t;
  double z_n;
  double z_f;
  enum OsUpAxis up;
} OsViewBox;

typedef struct OsRunConfig {
  uint32_t init_frames;
  uint32_t init_iters;
  uint32_t per_frame_iters;
  double gm;
  uint32_t h_t;
  /**
   * Scene units per TDOM pixel; zero or negative selects automatic.
   */
  double gsd;
  enum OsUpAxis up;
  uint64_t seed;
  bool prune;
  uint32_t seed_cap;
} OsRunConfig;

/**
 * Outcome of one streamed frame. `psnr_new_view` is NaN when the frame
 * had no key region.
 */
typedef struct OsFrameReport {
  uint32_t frame;
  uint64_t seeds_added;
  uint64_t field_size;
  uint32_t iters;
  double adopt_seconds;
  double psnr_new_view;
} OsFrameReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *os_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *os_version(void);

/**
 * Loads a checkpoint written by `os_field_save` or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OsStatus os_field_load(const char *path, struct OsField **out);

/**
 * # Safety
 * `field` must be a live handle and `path` a NUL-terminated string.
 */
enum OsStatus os_field_save(const struct OsField *field, const char *path);

/**
 * Number of Gaussians, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle.
 */
size_t os_field_len(const struct OsField *field);

/**
 * # Safety
 * `field` must be null or a handle not freed before.
 */
void os_field_free(struct OsField *field);

/**
 * Renders an orthophoto of `field` over `view_box` at `gsd` scene units
 * per pixel.
 *
 * # Safety
 * `field` must be a live handle; `view_box` and `out` valid pointers.
 */
enum OsStatus os_render_tdom(const struct OsField *field,
                             const struct OsViewBox *view_box,
                             double gsd,
                             struct OsRaster **out);

/**
 * # Safety
 * `raster` must be null or a live handle.
 */
size_t os_raster_width(const struct OsRaster *raster);

/**
 * # Safety
 * `raster` must be null or a live handle.
 */
size_t os_raster_height(const struct OsRaster *raster);

/**
 * Writes gsd and the world position of the upper-left pixel center.
 *
 * # Safety
 * `raster` must be a live handle; the out pointers must be valid.
 */
enum OsStatus os_raster_georef(const struct OsRaster *raster,
                               double *gsd,
                               double *origin_x,
                               double *origin_y);

/**
 * Copies the raster as 8-bit RGBA rows into `buf` of `len` bytes, which
 * must hold `width * height * 4`.
 *
 * # Safety
 * `raster` must be a live handle and `buf` valid for `len` bytes.
 */
enum OsStatus os_raster_copy_rgba(const struct OsRaster *raster, uint8_t *buf, size_t len);

/**
 * Writes `<stem>.png` and `<stem>.pgw`.
 *
 * # Safety
 * `raster` must be a live handle and `stem` a NUL-terminated string.
 */
enum OsStatus os_raster_write(const struct OsRaster *raster, const char *stem);

/**
 * # Safety
 * `raster` must be null or a handle not freed before.
 */
void os_raster_free(struct OsRaster *raster);

/**
 * Fills `cfg` with the default run configuration.
 *
 * # Safety
 * `cfg` must be a valid pointer.
 */
enum OsStatus os_run_config_default(struct OsRunConfig *cfg);

/**
 * Opens a scene for streaming. `order` may be null for ascending image ids.
 *
 * # Safety
 * String arguments must be NUL-terminated; `cfg` and `out` valid pointers.
 */
enum OsStatus os_engine_new(const char *scene_dir,
                            const char *images_dir,
                            const char *order,
                            const struct OsRunConfig *cfg,
                            struct OsEngine **out);

/**
 * Consumes the first frames and runs the initial fit.
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum OsStatus os_engine_initialize(struct OsEngine *engine);

/**
 * Processes one frame. On `Ok`, fills `report` and, if `raster` is not
 * null, stores a new TDOM handle the caller must free. Returns `Done` when
 * the stream is exhausted.
 *
 * # Safety
 * `engine` must be a live handle; `report` a valid pointer; `raster` null
 * or valid.
 */
enum OsStatus os_engine_step(struct OsEngine *engine,
                             struct OsFrameReport *report,
                             struct OsRaster **raster);

/**
 * Copies the engine's current field into a new handle.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum OsStatus os_engine_field(const struct OsEngine *engine, struct OsField **out);

/**
 * # Safety
 * `engine` must be null or a handle not freed before.
 */
void os_engine_free(struct OsEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORTHOSPLAT_H */
