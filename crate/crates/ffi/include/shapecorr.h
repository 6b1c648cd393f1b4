#ifndef SHAPECORR_H
#define SHAPECORR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_ARGUMENT = 2,
  SC_STATUS_IO = 3,
  SC_STATUS_FORMAT = 4,
  SC_STATUS_NUMERIC = 5,
  SC_STATUS_PANIC = 6,
} ScStatus;

/**
 * Triangle mesh handle.
 */
typedef struct ScMesh ScMesh;

/**
 * Trained model handle.
 */
typedef struct ScModel ScModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sc_last_error_message(char *buf, size_t len);

/**
 * Builds a mesh from `n_vertices * 3` coordinates and `n_faces * 3` indices.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `out` must be writable.
 */
enum ScStatus sc_mesh_new(const double *vertices,
                          size_t n_vertices,
                          const uint32_t *faces,
                          size_t n_faces,
                          struct ScMesh **out);

/**
 * Loads an OFF, OBJ or PLY mesh.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_mesh_load(const char *path, struct ScMesh **out);

/**
 * # Safety
 * `mesh` must be null or a handle from this library not yet freed.
 */
void sc_mesh_free(struct ScMesh *mesh);

/**
 * Vertex count, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t sc_mesh_vertex_count(const struct ScMesh *mesh);

/**
 * Writes the `k` smallest Laplace-Beltrami eigenvalues of the unit-area mesh.
 *
 * # Safety
 * `mesh` must be a live handle and `out_lambda` must hold `k` doubles.
 */
enum ScStatus sc_mesh_spectrum(const struct ScMesh *mesh, size_t k, double *out_lambda);

/**
 * Loads a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_model_load(const char *path, struct ScModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void sc_model_free(struct ScModel *model);

/**
 * Hard correspondence from `source` to `target` under `model`.
 *
 * Semantic features are row-major `n x sem_cols` floats and may be null when
 * the model does not use them. `out_map` must hold one entry per source vertex.
 *
 * # Safety
 * Handles must be live; arrays must have the stated sizes.
 */
enum ScStatus sc_match(const struct ScModel *model,
                       const struct ScMesh *source,
                       const float *source_features,
                       const struct ScMesh *target,
                       const float *target_features,
                       size_t sem_cols,
                       size_t *out_map);

/**
 * Mean geodesic error of `pred` against `gt` on the unit-area `target`.
 *
 * # Safety
 * `pred` and `gt` must hold `n` entries; `target` must be live.
 */
enum ScStatus sc_mean_geodesic_error(const size_t *pred,
                                     const size_t *gt,
                                     size_t n,
                                     const struct ScMesh *target,
                                     double *out);

/**
 * Mean conformal distortion of `map` from `source` to `target`.
 *
 * # Safety
 * `map` must hold one entry per source vertex; handles must be live.
 */
enum ScStatus sc_conformal_distortion(const size_t *map,
                                      const struct ScMesh *source,
                                      const struct ScMesh *target,
                                      double *out_mean);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPECORR_H */
