#ifndef SPLAT4D_H
#define SPLAT4D_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum Splat4dStatus {
  SPLAT4D_STATUS_OK = 0,
  // Null pointer, non-UTF-8 string or undersized buffer.
  SPLAT4D_STATUS_INVALID_ARGUMENT = 1,
  // Input rejected by the engine (bad data, config or file contents).
  SPLAT4D_STATUS_VALIDATION = 2,
  SPLAT4D_STATUS_IO = 3,
  // Numerical failure or internal error.
  SPLAT4D_STATUS_INTERNAL = 4,
  SPLAT4D_STATUS_PANIC = 5,
} Splat4dStatus;

// A loaded or generated dataset.
typedef struct Splat4dDataset Splat4dDataset;

// A Gaussian scene representation.
typedef struct Splat4dSet Splat4dSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. Valid until the
// next call into the library from the same thread.
const char *splat4d_last_error(void);

// Library version as a static NUL-terminated string.
const char *splat4d_version(void);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum Splat4dStatus splat4d_set_load(const char *path, struct Splat4dSet **out);

// # Safety
// `set` must come from this library; `path` must be NUL-terminated.
enum Splat4dStatus splat4d_set_save(const struct Splat4dSet *set, const char *path);

// Population sizes and frame count. Any output pointer may be null.
//
// # Safety
// `set` must come from this library.
enum Splat4dStatus splat4d_set_counts(const struct Splat4dSet *set,
                                      size_t *n_static,
                                      size_t *n_rigid,
                                      size_t *n_transient,
                                      size_t *n_frames);

// # Safety
// `set` must come from this library or be null.
void splat4d_set_free(struct Splat4dSet *set);

// # Safety
// `dir` must be NUL-terminated and `out` writable.
enum Splat4dStatus splat4d_dataset_load(const char *dir, struct Splat4dDataset **out);

// Generates a synthetic dataset from a JSON scene spec.
//
// # Safety
// `spec_json` must be NUL-terminated and `out` writable.
enum Splat4dStatus splat4d_dataset_synth(const char *spec_json, struct Splat4dDataset **out);

// # Safety
// `ds` must come from this library; `dir` must be NUL-terminated.
enum Splat4dStatus splat4d_dataset_save(const struct Splat4dDataset *ds, const char *dir);

// Image size and frame count. Any output pointer may be null.
//
// # Safety
// `ds` must come from this library.
enum Splat4dStatus splat4d_dataset_shape(const struct Splat4dDataset *ds,
                                         size_t *width,
                                         size_t *height,
                                         size_t *frames);

// # Safety
// `ds` must come from this library or be null.
void splat4d_dataset_free(struct Splat4dDataset *ds);

// Renders `set` at `frame` through the dataset camera of that frame into
// `rgb`, row-major `height × width × 3` doubles in [0,1].
//
// # Safety
// Handles must come from this library; `rgb` must hold `len` doubles.
enum Splat4dStatus splat4d_render(const struct Splat4dSet *set,
                                  const struct Splat4dDataset *ds,
                                  size_t frame,
                                  double *rgb,
                                  size_t len);

// Trains on `ds`. `config_json` may be null for defaults; `out_dir` may be
// null to skip the log and checkpoints.
//
// # Safety
// `ds` must come from this library; strings NUL-terminated; `out` writable.
enum Splat4dStatus splat4d_train(const struct Splat4dDataset *ds,
                                 const char *config_json,
                                 const char *out_dir,
                                 struct Splat4dSet **out);

// Mean PSNR and SSIM over `frames` (all frames when `frames` is null).
//
// # Safety
// Handles must come from this library; `frames` must hold `n_frames` entries.
enum Splat4dStatus splat4d_evaluate(const struct Splat4dSet *set,
                                    const struct Splat4dDataset *ds,
                                    const size_t *frames,
                                    size_t n_frames,
                                    double *psnr,
                                    double *ssim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLAT4D_H */
