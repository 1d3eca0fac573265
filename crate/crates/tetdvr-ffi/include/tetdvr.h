#ifndef TETDVR_H
#define TETDVR_H

/* Generated by cbindgen from the tetdvr-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum TdvrStatus {
  TDVR_STATUS_OK = 0,
  TDVR_STATUS_NULL_POINTER = 1,
  TDVR_STATUS_INVALID_ARGUMENT = 2,
  TDVR_STATUS_PARSE_ERROR = 3,
  TDVR_STATUS_IO_ERROR = 4,
  TDVR_STATUS_DIMENSION_MISMATCH = 5,
  TDVR_STATUS_UNSUPPORTED = 6,
  TDVR_STATUS_INTERNAL = 7,
} TdvrStatus;

/**
 * Opaque camera handle.
 */
typedef struct TdvrCamera TdvrCamera;

/**
 * Opaque per-vertex gradient buffer handle.
 */
typedef struct TdvrGradients TdvrGradients;

/**
 * Opaque image handle (row-major RGBA f64).
 */
typedef struct TdvrImage TdvrImage;

/**
 * Opaque tetrahedral mesh handle.
 */
typedef struct TdvrMesh TdvrMesh;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread.
 */
const char *tdvr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tdvr_version(void);

/**
 * Caps the worker thread count; 0 keeps the default. Must be called before
 * any rendering call to take effect.
 */
enum TdvrStatus tdvr_set_threads(uintptr_t threads);

/**
 * Builds a regular grid mesh with `dims[0..3]` cells per axis tiling the
 * box `bbox = [x0, y0, z0, x1, y1, z1]`, constant initial color and
 * extinction.
 *
 * # Safety
 * `dims` points to 3 u32 values, `bbox` to 6 and `color` to 3 doubles;
 * `out` must be a valid destination pointer.
 */
enum TdvrStatus tdvr_mesh_grid(const uint32_t *dims,
                               const double *bbox,
                               const double *color,
                               double opacity,
                               struct TdvrMesh **out);

/**
 * Loads a mesh container file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` must be valid.
 */
enum TdvrStatus tdvr_mesh_load(const char *path, struct TdvrMesh **out);

/**
 * # Safety
 * `mesh` must come from this library; `path` is NUL-terminated.
 */
enum TdvrStatus tdvr_mesh_save(const struct TdvrMesh *mesh, const char *path);

/**
 * # Safety
 * `mesh` must come from this library or be null.
 */
void tdvr_mesh_free(struct TdvrMesh *mesh);

/**
 * # Safety
 * `mesh` must come from this library.
 */
uintptr_t tdvr_mesh_num_vertices(const struct TdvrMesh *mesh);

/**
 * # Safety
 * `mesh` must come from this library.
 */
uintptr_t tdvr_mesh_num_tets(const struct TdvrMesh *mesh);

/**
 * Number of structural violations (inverted tets, nonconforming faces, bad
 * attributes, malformed tets); 0 means the mesh is valid.
 *
 * # Safety
 * `mesh` must come from this library.
 */
uintptr_t tdvr_mesh_validate(const struct TdvrMesh *mesh);

/**
 * Copies per-vertex data out of the mesh. Any destination may be null to
 * skip it; non-null destinations need room for `num_vertices * 3` doubles
 * (positions, colors) or `num_vertices` (opacities).
 *
 * # Safety
 * Destinations, when non-null, must satisfy the size contract above.
 */
enum TdvrStatus tdvr_mesh_get_vertices(const struct TdvrMesh *mesh,
                                       double *positions,
                                       double *colors,
                                       double *opacities);

/**
 * Overwrites per-vertex data; null sources are skipped. Sizes as in
 * [`tdvr_mesh_get_vertices`]. Opacities are clamped to be non-negative.
 *
 * # Safety
 * Sources, when non-null, must satisfy the size contract.
 */
enum TdvrStatus tdvr_mesh_set_vertices(struct TdvrMesh *mesh,
                                       const double *positions,
                                       const double *colors,
                                       const double *opacities);

/**
 * Look-at pinhole camera. `eye`, `target`, `up` each point to 3 doubles;
 * `fov_x` is the horizontal field of view in radians.
 *
 * # Safety
 * Pointer arguments as documented; `out` must be valid.
 */
enum TdvrStatus tdvr_camera_look_at(const double *eye,
                                    const double *target,
                                    const double *up,
                                    double fov_x,
                                    uint32_t width,
                                    uint32_t height,
                                    double near,
                                    double far,
                                    struct TdvrCamera **out);

/**
 * Loads frame `index` of a pose file.
 *
 * # Safety
 * `path` is NUL-terminated; `out` must be valid.
 */
enum TdvrStatus tdvr_camera_from_pose_file(const char *path,
                                           uintptr_t index,
                                           uint32_t width,
                                           uint32_t height,
                                           double near,
                                           double far,
                                           struct TdvrCamera **out);

/**
 * # Safety
 * `camera` must come from this library or be null.
 */
void tdvr_camera_free(struct TdvrCamera *camera);

/**
 * # Safety
 * `path` is NUL-terminated; `out` must be valid.
 */
enum TdvrStatus tdvr_image_read(const char *path, struct TdvrImage **out);

/**
 * Writes `.png` (8-bit sRGB) or `.pf64` (lossless float) by extension.
 *
 * # Safety
 * `image` from this library; `path` NUL-terminated.
 */
enum TdvrStatus tdvr_image_write(const struct TdvrImage *image, const char *path);

/**
 * Wraps a caller-provided RGBA f64 buffer (copied) as an image.
 *
 * # Safety
 * `pixels` points to `width * height * 4` doubles; `out` must be valid.
 */
enum TdvrStatus tdvr_image_from_data(uint32_t width,
                                     uint32_t height,
                                     const double *pixels,
                                     struct TdvrImage **out);

/**
 * # Safety
 * `image` must come from this library.
 */
uint32_t tdvr_image_width(const struct TdvrImage *image);

/**
 * # Safety
 * `image` must come from this library.
 */
uint32_t tdvr_image_height(const struct TdvrImage *image);

/**
 * Copies the RGBA f64 pixels into `dst` (`width * height * 4` doubles).
 *
 * # Safety
 * `dst` must satisfy the size contract.
 */
enum TdvrStatus tdvr_image_copy_data(const struct TdvrImage *image, double *dst);

/**
 * # Safety
 * `image` must come from this library or be null.
 */
void tdvr_image_free(struct TdvrImage *image);

/**
 * PSNR in dB over RGB; infinity for identical images.
 *
 * # Safety
 * Handles from this library; `out` must be valid.
 */
enum TdvrStatus tdvr_psnr(const struct TdvrImage *a,
                          const struct TdvrImage *b,
                          double peak,
                          double *out);

/**
 * Renders the mesh through `camera`. `background` may be null (opaque
 * black) or point to straight RGBA.
 *
 * # Safety
 * Handles from this library; `out` must be valid.
 */
enum TdvrStatus tdvr_render(const struct TdvrMesh *mesh,
                            const struct TdvrCamera *camera,
                            uint32_t n_sub,
                            const double *background,
                            struct TdvrImage **out);

/**
 * Renders, compares against `target` with an L1 (`loss_kind` = 1) or L2
 * (anything else) loss, and backpropagates to per-vertex gradients.
 * `out_loss` may be null.
 *
 * # Safety
 * Handles from this library; `out_grads` must be valid.
 */
enum TdvrStatus tdvr_render_backward(const struct TdvrMesh *mesh,
                                     const struct TdvrCamera *camera,
                                     const struct TdvrImage *target,
                                     uint32_t n_sub,
                                     const double *background,
                                     int32_t loss_kind,
                                     double *out_loss,
                                     struct TdvrGradients **out_grads);

/**
 * Copies gradient data out; any destination may be null. Sizes:
 * `num_vertices * 3` (colors, positions), `num_vertices` (opacities,
 * magnitudes).
 *
 * # Safety
 * Destinations, when non-null, must satisfy the size contract.
 */
enum TdvrStatus tdvr_gradients_copy(const struct TdvrGradients *grads,
                                    double *color,
                                    double *opacity,
                                    double *position,
                                    double *magnitude);

/**
 * # Safety
 * `grads` must come from this library.
 */
uintptr_t tdvr_gradients_len(const struct TdvrGradients *grads);

/**
 * # Safety
 * `grads` must come from this library or be null.
 */
void tdvr_gradients_free(struct TdvrGradients *grads);

/**
 * Refines the mesh around the vertices with the largest accumulated
 * gradient magnitudes, producing a new conforming mesh.
 *
 * # Safety
 * Handles from this library; `out` must be valid.
 */
enum TdvrStatus tdvr_refine(const struct TdvrMesh *mesh,
                            const struct TdvrGradients *grads,
                            double fraction,
                            struct TdvrMesh **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TETDVR_H */
