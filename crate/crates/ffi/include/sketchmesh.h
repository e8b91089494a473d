#ifndef SKETCHMESH_H
#define SKETCHMESH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_IO = 3,
  SM_STATUS_CHECKPOINT = 4,
  SM_STATUS_INVALID_SKETCH = 5,
  SM_STATUS_EMPTY_SKETCH = 6,
  SM_STATUS_INTERNAL = 7,
  SM_STATUS_PANIC = 8,
} SmStatus;

typedef enum SmFormat {
  SM_FORMAT_OBJ = 0,
  SM_FORMAT_STL = 1,
} SmFormat;

/**
 * A watertight triangle mesh.
 */
typedef struct SmMesh SmMesh;

/**
 * A loaded checkpoint.
 */
typedef struct SmSession SmSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sm_last_error(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SmStatus sm_session_load(const char *path, struct SmSession **out);

/**
 * Loads a checkpoint from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
enum SmStatus sm_session_from_bytes(const uint8_t *data, size_t len, struct SmSession **out);

/**
 * # Safety
 * `session` must come from a `sm_session_*` constructor or be null.
 */
void sm_session_free(struct SmSession *session);

/**
 * Sketch resolution the model expects; 0 for a null session.
 *
 * # Safety
 * `session` must be a live handle or null.
 */
size_t sm_session_resolution(const struct SmSession *session);

/**
 * SHA-256 of the checkpoint as 64 hex characters, owned by the session.
 *
 * # Safety
 * `session` must be a live handle or null.
 */
const char *sm_session_checkpoint_id(const struct SmSession *session);

/**
 * Infers a mesh from a row-major 8-bit grayscale image, dark strokes on a
 * light background. Any size is accepted; it is resampled to the model
 * resolution and thresholded at 128.
 *
 * # Safety
 * `pixels` must point to `width * height` readable bytes, `session` must be
 * live and `out` writable.
 */
enum SmStatus sm_infer(const struct SmSession *session,
                       const uint8_t *pixels,
                       size_t width,
                       size_t height,
                       struct SmMesh **out);

/**
 * # Safety
 * `mesh` must come from [`sm_infer`] or be null.
 */
void sm_mesh_free(struct SmMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle or null.
 */
size_t sm_mesh_vertex_count(const struct SmMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle or null.
 */
size_t sm_mesh_face_count(const struct SmMesh *mesh);

/**
 * `3 * vertex_count` floats, `x y z` per vertex, owned by the mesh.
 *
 * # Safety
 * `mesh` must be a live handle or null.
 */
const float *sm_mesh_vertices(const struct SmMesh *mesh);

/**
 * `3 * face_count` zero-based vertex indices, owned by the mesh.
 *
 * # Safety
 * `mesh` must be a live handle or null.
 */
const uint32_t *sm_mesh_faces(const struct SmMesh *mesh);

/**
 * Wall-clock inference time in milliseconds.
 *
 * # Safety
 * `mesh` must be a live handle or null.
 */
double sm_mesh_inference_ms(const struct SmMesh *mesh);

/**
 * Serializes the mesh. The buffer is released with [`sm_bytes_free`].
 *
 * # Safety
 * `mesh` must be live; `out_data` and `out_len` must be writable.
 */
enum SmStatus sm_mesh_export(const struct SmMesh *mesh,
                             enum SmFormat format,
                             uint8_t **out_data,
                             size_t *out_len);

/**
 * # Safety
 * `data` and `len` must come from one [`sm_mesh_export`] call, or `data`
 * must be null.
 */
void sm_bytes_free(uint8_t *data, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKETCHMESH_H */
