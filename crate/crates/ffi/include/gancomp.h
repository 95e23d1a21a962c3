/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef GANCOMP_H
#define GANCOMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define GC_OK 0

/**
 * A required pointer argument was null.
 */
#define GC_ERR_NULL 1

/**
 * A string argument was not valid UTF-8.
 */
#define GC_ERR_UTF8 2

/**
 * An output buffer was too small.
 */
#define GC_ERR_BUFFER 3

/**
 * An internal panic was caught.
 */
#define GC_ERR_PANIC 4

#define GC_ERR_SHAPE 10

#define GC_ERR_ARCH 20

#define GC_ERR_CONFIG 21

#define GC_ERR_DIVERGENCE 30

#define GC_ERR_INFEASIBLE_BUDGET 40

#define GC_ERR_TOO_FEW_SAMPLES 50

#define GC_ERR_BAD_MAGIC 60

#define GC_ERR_VERSION_MISMATCH 61

#define GC_ERR_HASH_MISMATCH 62

#define GC_ERR_MISSING_TENSOR 63

#define GC_ERR_UNEXPECTED_TENSOR 64

#define GC_ERR_MALFORMED 65

#define GC_ERR_RUN_CONFIG 80

#define GC_ERR_LOCKED 81

#define GC_ERR_IO 90

#define GC_ERR_JSON 91

/**
 * A trained generator (teacher, student, supernet or fine-tuned model).
 */
typedef struct GcModel GcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gc_version(void);

/**
 * Writes the last error message of this thread into `buf` (capacity `cap`
 * bytes, always NUL-terminated when `cap > 0`) and returns its full length.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t gc_last_error_message(char *buf, size_t cap);

/**
 * MACs and parameters of the generator described by `spec_json` (a
 * GeneratorSpec document), optionally sliced to `config_vec`
 * ("c1,c2,..."; null for full width), at `resolution` (0 for the spec's).
 *
 * # Safety
 * String arguments must be null or NUL-terminated; outputs must be valid.
 */
int32_t gc_generator_cost(const char *spec_json,
                          const char *config_vec,
                          size_t resolution,
                          uint64_t *macs,
                          uint64_t *params);

/**
 * Loads a checkpoint into a new model handle.
 *
 * # Safety
 * `path` must be NUL-terminated; `model` must be a valid pointer.
 */
int32_t gc_model_load(const char *path, struct GcModel **model);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`gc_model_load`] and not be used afterwards.
 */
void gc_model_free(struct GcModel *model);

/**
 * Input side length the model was built for.
 *
 * # Safety
 * `model` must be a live handle.
 */
int32_t gc_model_resolution(const struct GcModel *model, size_t *side);

/**
 * Translates `n` images of `3 × side × side` floats in [-1, 1] (NCHW,
 * contiguous) into `output`, which must hold the same number of floats.
 * `config_vec` selects a sub-network of a supernet; null runs full width.
 *
 * # Safety
 * `input` and `output` must each point to `n·3·side·side` floats.
 */
int32_t gc_model_translate(const struct GcModel *model,
                           const char *config_vec,
                           const float *input,
                           size_t n,
                           size_t side,
                           float *output);

/**
 * Fréchet feature distance between two image sets (`3 × side × side`
 * floats each, NCHW).
 *
 * # Safety
 * `a` must point to `n_a·3·side·side` floats and `b` to `n_b·3·side·side`.
 */
int32_t gc_ffd(const float *a,
               size_t n_a,
               const float *b,
               size_t n_b,
               size_t side,
               double *distance);

/**
 * Runs (or resumes) the pipeline configured in the JSON file `config_path`
 * into `out_dir`. The report JSON is copied into `report` (capacity `cap`,
 * may be null); `report_len` (may be null) receives its full length.
 *
 * # Safety
 * Paths must be NUL-terminated; `report` must be null or hold `cap` bytes.
 */
int32_t gc_pipeline_run(const char *config_path,
                        const char *out_dir,
                        char *report,
                        size_t cap,
                        size_t *report_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GANCOMP_H */
